#pragma once

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "xssl/config.hpp"
#include "xssl/eval_probe.hpp"
#include "xssl/pretrain.hpp"

namespace xssl {

struct GradcheckEntry {
  std::string name;
  double max_rel_err = 0.0;
  double tolerance = 0.0;
  bool pass = false;
};

struct GradcheckReport {
  std::vector<GradcheckEntry> entries;
  bool all_pass = false;
  double elapsed_s = 0.0;
};

// Finite-difference check of every tape op (tolerance 1e-5) and of the
// module-level losses up to both hosts' composites (1e-4), on tiny random
// instances.
GradcheckReport run_gradcheck(uint64_t seed = 0);

struct ProbeOutcome {
  uint64_t probe_seed = 0;
  double miou = 0.0;
  std::vector<double> per_class;
  double train_accuracy = 0.0;
  uint64_t encoder_checksum_before = 0;
  uint64_t encoder_checksum_after = 0;
};

// Linear-probe evaluation of a frozen encoder: features from probe_train,
// head trained there, mIoU measured on probe_test.
ProbeOutcome run_probe(const ParamSet& encoder, const EncoderConfig& enc_cfg,
                       const Dataset& probe_train, const Dataset& probe_test,
                       const ProbeConfig& cfg);

std::vector<ProbeOutcome> run_probe_on_checkpoint(const std::string& checkpoint_path,
                                                  const std::string& probe_train_path,
                                                  const std::string& probe_test_path,
                                                  std::span<const uint64_t> probe_seeds);

void write_probe_csv(const std::string& path, const std::string& model_variant,
                     std::span<const ProbeOutcome> outcomes);

// One experiment-grid cell: a pretraining config plus its grid coordinates.
struct CellSpec {
  std::string experiment;
  std::string cell;  // e.g. "ijepa/sa"
  TrainConfig cfg;
};

struct CellOutcome {
  CellSpec spec;
  PretrainOutcome train;
  ProbeOutcome probe;
};

// Cell grids for the four comparison experiments. data_dir must hold the
// gen-data outputs (train/probe_train/probe_test containers).
std::vector<CellSpec> matrix_cells(const std::string& experiment, const std::string& data_dir,
                                   const std::string& out_dir,
                                   std::span<const uint64_t> seeds);

// Runs cells on a small worker pool (XSSL_THREADS caps it); each cell is
// internally single-threaded and fully deterministic.
std::vector<CellOutcome> run_cells(std::span<const CellSpec> specs,
                                   const std::string& probe_train_path,
                                   const std::string& probe_test_path, int threads,
                                   std::ostream* log);

void write_matrix_csv(const std::string& path, std::span<const CellOutcome> cells);

// XSSL_THREADS when set, else hardware concurrency, at least 1.
int resolve_thread_count();

inline constexpr uint64_t kDefaultSeeds[3] = {0, 1, 2};

}  // namespace xssl
