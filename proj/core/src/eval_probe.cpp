#include "xssl/eval_probe.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>

#include "xssl/optim.hpp"
#include "xssl/patch_grid.hpp"
#include "xssl/rng.hpp"

namespace xssl {

Tensor encode_scene_mr(const ParamSet& encoder, const EncoderConfig& cfg,
                       const PairedScene& scene) {
  const PatchGrid grid(scene.mr.height, scene.mr.width, cfg.patch_size);
  Tensor rows = patchify(scene.mr, cfg.patch_size);
  std::vector<int64_t> all(static_cast<size_t>(grid.num_patches()));
  for (size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int64_t>(i);
  GradTape tape;  // nothing recorded unless encoder params require grad
  Tensor reps = encode(tape, encoder, cfg, rows, all, grid);
  return reps.clone_detached();
}

// Softmax cross-entropy forward+gradient for a linear head, closed form.
double probe_loss_and_grads(const Tensor& x, const std::vector<int64_t>& labels,
                            const Tensor& w, const Tensor& b, double* gw, double* gb,
                            int64_t k) {
  const int64_t n = x.dim(0), d = x.dim(1);
  std::vector<double> logits(static_cast<size_t>(k));
  std::vector<double> delta(static_cast<size_t>(n * k));  // p - onehot
  double loss = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    const double* xi = x.data() + i * d;
    for (int64_t j = 0; j < k; ++j) {
      double s = b.data()[j];
      for (int64_t c = 0; c < d; ++c) s += xi[c] * w.data()[c * k + j];
      logits[static_cast<size_t>(j)] = s;
    }
    const double mx = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    for (int64_t j = 0; j < k; ++j) z += std::exp(logits[static_cast<size_t>(j)] - mx);
    const int64_t y = labels[static_cast<size_t>(i)];
    loss -= logits[static_cast<size_t>(y)] - mx - std::log(z);
    for (int64_t j = 0; j < k; ++j) {
      const double p = std::exp(logits[static_cast<size_t>(j)] - mx) / z;
      delta[static_cast<size_t>(i * k + j)] = p - (j == y ? 1.0 : 0.0);
    }
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  blas::gemm_tn(x.data(), delta.data(), gw, d, n, k, false);
  for (int64_t c = 0; c < d * k; ++c) gw[c] *= inv_n;
  std::fill(gb, gb + k, 0.0);
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < k; ++j) gb[j] += delta[static_cast<size_t>(i * k + j)] * inv_n;
  return loss * inv_n;
}

ProbeHead train_probe(const Tensor& features, const std::vector<int64_t>& labels,
                      int64_t k_classes, const ProbeConfig& cfg) {
  if (!features.defined() || features.rank() != 2 || features.dim(0) == 0)
    throw std::invalid_argument("train_probe: need a nonempty rank-2 feature matrix");
  if (static_cast<int64_t>(labels.size()) != features.dim(0))
    throw std::invalid_argument("train_probe: feature/label count mismatch");
  for (int64_t y : labels)
    if (y < 0 || y >= k_classes)
      throw std::invalid_argument("train_probe: label " + std::to_string(y) +
                                  " outside [0," + std::to_string(k_classes) + ")");
  const int64_t d = features.dim(1);
  Rng rng = Rng(cfg.seed).fork(0x9e0b);
  ProbeHead head;
  head.k_classes = k_classes;
  head.w = Tensor({d, k_classes});
  for (int64_t i = 0; i < head.w.size(); ++i) head.w.data()[i] = rng.truncated_normal(0.02);
  head.b = Tensor({k_classes}, 0.0);

  ParamSet params;
  params.emplace("b", head.b);
  params.emplace("w", head.w);
  AdamWState opt(AdamWConfig{.weight_decay = cfg.weight_decay, .base_lr = cfg.lr});
  for (int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    probe_loss_and_grads(features, labels, head.w, head.b, head.w.grad_data(),
                         head.b.grad_data(), k_classes);
    opt.step(params, cfg.lr);
  }
  return head;
}

std::vector<int64_t> probe_predict(const ProbeHead& head, const Tensor& features) {
  const int64_t n = features.dim(0), d = features.dim(1), k = head.k_classes;
  std::vector<int64_t> preds(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    const double* xi = features.data() + i * d;
    int64_t best = 0;
    double best_s = -std::numeric_limits<double>::infinity();
    for (int64_t j = 0; j < k; ++j) {
      double s = head.b.data()[j];
      for (int64_t c = 0; c < d; ++c) s += xi[c] * head.w.data()[c * k + j];
      if (s > best_s) {
        best_s = s;
        best = j;
      }
    }
    preds[static_cast<size_t>(i)] = best;
  }
  return preds;
}

double probe_accuracy(const ProbeHead& head, const Tensor& features,
                      const std::vector<int64_t>& labels) {
  const auto preds = probe_predict(head, features);
  int64_t correct = 0;
  for (size_t i = 0; i < preds.size(); ++i)
    if (preds[i] == labels[i]) ++correct;
  return static_cast<double>(correct) / static_cast<double>(preds.size());
}

MiouResult compute_miou(const std::vector<int64_t>& preds,
                        const std::vector<int64_t>& labels, int64_t k_classes) {
  if (preds.empty() || preds.size() != labels.size())
    throw std::invalid_argument("compute_miou: empty or mismatched inputs");
  MiouResult r;
  r.confusion.k = k_classes;
  r.confusion.counts.assign(static_cast<size_t>(k_classes * k_classes), 0);
  for (size_t i = 0; i < preds.size(); ++i) {
    if (preds[i] < 0 || preds[i] >= k_classes || labels[i] < 0 || labels[i] >= k_classes)
      throw std::invalid_argument("compute_miou: value outside [0,K)");
    ++r.confusion.at(labels[i], preds[i]);
  }
  double sum = 0.0;
  int64_t present = 0;
  for (int64_t c = 0; c < k_classes; ++c) {
    const int64_t tp = r.confusion.at(c, c);
    int64_t fp = 0, fn = 0;
    for (int64_t o = 0; o < k_classes; ++o) {
      if (o == c) continue;
      fp += r.confusion.at(o, c);
      fn += r.confusion.at(c, o);
    }
    if (tp + fp + fn == 0) {
      r.per_class.push_back(std::numeric_limits<double>::quiet_NaN());
      continue;
    }
    const double iou = static_cast<double>(tp) / static_cast<double>(tp + fp + fn);
    r.per_class.push_back(iou);
    sum += iou;
    ++present;
  }
  r.mean = present > 0 ? sum / static_cast<double>(present) : 0.0;
  return r;
}

std::vector<int64_t> hierarchical_cluster(const Tensor& reps, int64_t k) {
  if (!reps.defined() || reps.rank() != 2)
    throw std::invalid_argument("hierarchical_cluster: need rank-2 representations");
  const int64_t n = reps.dim(0), d = reps.dim(1);
  if (k < 1 || k > n)
    throw std::invalid_argument("hierarchical_cluster: k=" + std::to_string(k) +
                                " outside [1," + std::to_string(n) + "]");

  // Cosine distance on normalized rows.
  std::vector<double> normed(static_cast<size_t>(n * d));
  for (int64_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (int64_t c = 0; c < d; ++c) s += reps.data()[i * d + c] * reps.data()[i * d + c];
    const double r = std::max(std::sqrt(s), 1e-12);
    for (int64_t c = 0; c < d; ++c) normed[static_cast<size_t>(i * d + c)] = reps.data()[i * d + c] / r;
  }
  std::vector<double> dist(static_cast<size_t>(n * n), 0.0);
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = i + 1; j < n; ++j) {
      double dot = 0.0;
      for (int64_t c = 0; c < d; ++c)
        dot += normed[static_cast<size_t>(i * d + c)] * normed[static_cast<size_t>(j * d + c)];
      dist[static_cast<size_t>(i * n + j)] = dist[static_cast<size_t>(j * n + i)] = 1.0 - dot;
    }

  // Average linkage via Lance-Williams on cluster ids = smallest member.
  std::vector<bool> active(static_cast<size_t>(n), true);
  std::vector<int64_t> size(static_cast<size_t>(n), 1);
  std::vector<int64_t> parent(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) parent[static_cast<size_t>(i)] = i;

  for (int64_t merges = 0; merges < n - k; ++merges) {
    int64_t bi = -1, bj = -1;
    double best = std::numeric_limits<double>::infinity();
    for (int64_t i = 0; i < n; ++i) {
      if (!active[static_cast<size_t>(i)]) continue;
      for (int64_t j = i + 1; j < n; ++j) {
        if (!active[static_cast<size_t>(j)]) continue;
        const double dij = dist[static_cast<size_t>(i * n + j)];
        if (dij < best) {  // scan order is (i,j) lexicographic, strict < keeps the first
          best = dij;
          bi = i;
          bj = j;
        }
      }
    }
    // Merge bj into bi (bi < bj keeps the smallest member as the id).
    const double na = static_cast<double>(size[static_cast<size_t>(bi)]);
    const double nb = static_cast<double>(size[static_cast<size_t>(bj)]);
    for (int64_t c = 0; c < n; ++c) {
      if (!active[static_cast<size_t>(c)] || c == bi || c == bj) continue;
      const double dac = dist[static_cast<size_t>(bi * n + c)];
      const double dbc = dist[static_cast<size_t>(bj * n + c)];
      const double merged = (na * dac + nb * dbc) / (na + nb);
      dist[static_cast<size_t>(bi * n + c)] = dist[static_cast<size_t>(c * n + bi)] = merged;
    }
    size[static_cast<size_t>(bi)] += size[static_cast<size_t>(bj)];
    active[static_cast<size_t>(bj)] = false;
    parent[static_cast<size_t>(bj)] = bi;
  }

  auto find_root = [&](int64_t i) {
    while (parent[static_cast<size_t>(i)] != i) i = parent[static_cast<size_t>(i)];
    return i;
  };
  // Number clusters by first-member order.
  std::vector<int64_t> labels(static_cast<size_t>(n), -1);
  std::vector<int64_t> order;
  for (int64_t i = 0; i < n; ++i) {
    const int64_t root = find_root(i);
    auto it = std::find(order.begin(), order.end(), root);
    if (it == order.end()) {
      order.push_back(root);
      it = std::prev(order.end());
    }
    labels[static_cast<size_t>(i)] = it - order.begin();
  }
  return labels;
}

void export_cluster_map(const std::vector<int64_t>& labels, int64_t grid_h,
                        int64_t grid_w, int64_t k, const std::string& path) {
  if (static_cast<int64_t>(labels.size()) != grid_h * grid_w)
    throw std::invalid_argument("export_cluster_map: label count != grid size");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("export_cluster_map: cannot open '" + path + "'");
  out << "P5\n" << grid_w << " " << grid_h << "\n255\n";
  for (int64_t v : labels) {
    if (v < 0 || v >= k)
      throw std::invalid_argument("export_cluster_map: label " + std::to_string(v) +
                                  " outside [0," + std::to_string(k) + ")");
    const int64_t gray = k > 1 ? 255 * v / (k - 1) : 0;
    out.put(static_cast<char>(gray));
  }
  if (!out) throw std::runtime_error("export_cluster_map: write failed for '" + path + "'");
}

std::vector<int64_t> read_cluster_map(const std::string& path, int64_t k) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("read_cluster_map: cannot open '" + path + "'");
  std::string magic;
  int64_t w = 0, h = 0, maxval = 0;
  in >> magic >> w >> h >> maxval;
  if (magic != "P5" || maxval != 255)
    throw std::runtime_error("read_cluster_map: '" + path + "' is not an 8-bit P5 map");
  in.get();  // single whitespace after header
  std::vector<int64_t> labels;
  labels.reserve(static_cast<size_t>(w * h));
  for (int64_t i = 0; i < w * h; ++i) {
    const int c = in.get();
    if (c == EOF) throw std::runtime_error("read_cluster_map: truncated '" + path + "'");
    // inverse of gray = floor(255*v/(k-1))
    labels.push_back(k > 1 ? (c * (k - 1) + 127) / 255 : 0);
  }
  return labels;
}

}  // namespace xssl
