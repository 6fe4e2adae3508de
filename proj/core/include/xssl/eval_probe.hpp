#pragma once

#include <string>
#include <vector>

#include "xssl/params.hpp"
#include "xssl/synth_data.hpp"
#include "xssl/vit.hpp"

namespace xssl {

// Frozen-encoder patch representations of a scene's MR raster, full grid.
Tensor encode_scene_mr(const ParamSet& encoder, const EncoderConfig& cfg,
                       const PairedScene& scene);

struct ProbeConfig {
  int64_t epochs = 100;
  double lr = 1e-2;
  double weight_decay = 0.0;
  uint64_t seed = 0;
};

// Linear softmax head over frozen patch representations.
struct ProbeHead {
  Tensor w;  // d x K
  Tensor b;  // K
  int64_t k_classes = 0;
};

// Full-batch AdamW on softmax cross-entropy; features rows x d, labels in
// [0, K). Only the head's parameters are updated.
ProbeHead train_probe(const Tensor& features, const std::vector<int64_t>& labels,
                      int64_t k_classes, const ProbeConfig& cfg);

// Closed-form softmax cross-entropy loss and gradients of the linear head;
// exposed so the gradient checker can verify it against finite differences.
double probe_loss_and_grads(const Tensor& features, const std::vector<int64_t>& labels,
                            const Tensor& w, const Tensor& b, double* gw, double* gb,
                            int64_t k_classes);

std::vector<int64_t> probe_predict(const ProbeHead& head, const Tensor& features);

double probe_accuracy(const ProbeHead& head, const Tensor& features,
                      const std::vector<int64_t>& labels);

struct ConfusionMatrix {
  int64_t k = 0;
  std::vector<int64_t> counts;  // k x k, rows = truth, cols = prediction

  int64_t& at(int64_t truth, int64_t pred) { return counts[static_cast<size_t>(truth * k + pred)]; }
  int64_t at(int64_t truth, int64_t pred) const { return counts[static_cast<size_t>(truth * k + pred)]; }
};

struct MiouResult {
  std::vector<double> per_class;  // NaN for classes absent from both sides
  double mean = 0.0;
  ConfusionMatrix confusion;
};

// IoU_k = TP/(TP+FP+FN); classes absent from both prediction and truth are
// excluded from the mean.
MiouResult compute_miou(const std::vector<int64_t>& preds,
                        const std::vector<int64_t>& labels, int64_t k_classes);

// Agglomerative clustering, average linkage, cosine distance on
// L2-normalized rows. Ties merge the lexicographically smallest (i, j)
// cluster-id pair; output labels are numbered by first-member order.
std::vector<int64_t> hierarchical_cluster(const Tensor& reps, int64_t k);

// P5 graymap, one pixel per patch, label v mapped to floor(255*v/(k-1)).
void export_cluster_map(const std::vector<int64_t>& labels, int64_t grid_h,
                        int64_t grid_w, int64_t k, const std::string& path);

std::vector<int64_t> read_cluster_map(const std::string& path, int64_t k);

}  // namespace xssl
