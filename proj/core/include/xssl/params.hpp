#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "xssl/tensor.hpp"

namespace xssl {

// Named parameter tensors, sorted by name so every traversal (optimizer,
// EMA, checkpointing, hashing) visits them in one deterministic order.
using ParamSet = std::map<std::string, Tensor>;

// Deep copy; copies never require grad (teacher/EMA side).
ParamSet clone_params(const ParamSet& params);

void set_requires_grad(ParamSet& params, bool v);
void zero_grads(ParamSet& params);

int64_t param_count(const ParamSet& params);

// target <- m*target + (1-m)*student, elementwise. Shapes must agree.
void ema_update(ParamSet& target, const ParamSet& student, double momentum);

// FNV-1a over names, shapes and raw float64 payloads; order is the map order.
uint64_t params_checksum(const ParamSet& params);

// Prefixes every name; used to assemble checkpoint namespaces.
void merge_params(ParamSet& dst, const ParamSet& src, const std::string& prefix);

}  // namespace xssl
