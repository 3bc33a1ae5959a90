#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <torch/torch.h>

namespace synthdet::dimred {

/// Relational autoencoder objective on a batch of b rows:
///   (1 - alpha) / b^2 * sum_{i,k} (R_in[i,k] - R_out[i,k])^2
///   + alpha / b^2 * sum_{i<j} (|R_out[i]-R_out[j]|^2 - |R_in[i]-R_in[j]|^2)^2
/// With `recon_over_b2` false the first normalizer becomes 1 / (b * n).
/// Differentiable in both arguments. Throws ShapeMismatch, InvalidArgument.
torch::Tensor rdra_loss(const torch::Tensor& r_in, const torch::Tensor& r_out, double alpha,
                        bool recon_over_b2 = true);

struct EmbeddingSet {
  torch::Tensor vectors;            // [N, n]
  std::vector<std::string> labels;  // one per row, for coloring
  std::vector<std::string> ids;     // optional, one per row

  void validate() const;  // N >= 2, finite, label count matches
};

struct RdraConfig {
  double alpha = 0.5;
  /// Encoder widths after the input, ending in the 2-d bottleneck; the
  /// decoder mirrors them. Empty = geometric interpolation n -> 2 over three
  /// layers.
  std::vector<int> widths;
  int batch_size = 64;
  int epochs = 100;
  double lr = 1e-3;
  std::uint64_t seed = 0;
  bool recon_over_b2 = true;

  void validate() const;
};

std::vector<int> default_widths(int input_dim);

/// Fully connected encoder and decoder, ReLU after every hidden layer; the
/// bottleneck and the output layer are linear.
struct RdraModel {
  torch::nn::Sequential encoder{nullptr};
  torch::nn::Sequential decoder{nullptr};
};

struct RdraFit {
  RdraModel model;
  torch::Tensor projections;           // [N, 2]
  torch::Tensor reconstruction;        // [N, n]
  std::vector<double> epoch_loss;      // mean mini-batch loss per epoch
};

/// Adam on shuffled mini-batches. Throws InsufficientData (N < batch_size),
/// NonFiniteLoss.
RdraFit fit_rdra(const EmbeddingSet& data, const RdraConfig& cfg);

struct AlphaRow {
  double alpha = 0.0;
  double abs_error = 0.0;        // mean |R_in - R_out| over all entries
  double cosine_distance = 0.0;  // mean over rows of 1 - cos(d_in(i), d_out(i))
  double score = 0.0;            // sum of min-max normalized criteria
};

struct AlphaSearch {
  double best_alpha = 0.0;
  std::vector<AlphaRow> rows;
  RdraFit best_fit;
};

/// Mean absolute reconstruction error and mean cosine distance between each
/// row's vector of distances to all rows, before and after reconstruction.
AlphaRow reconstruction_criteria(const torch::Tensor& r_in, const torch::Tensor& r_out);

/// Fits one model per alpha and keeps the lowest score; ties go to the
/// earlier grid entry. Throws InvalidArgument on an empty grid or an alpha
/// outside [0, 1].
AlphaSearch alpha_search(const EmbeddingSet& data, std::span<const double> grid,
                         const RdraConfig& base);

/// "id x y label" per line.
void write_projections(const EmbeddingSet& data, const torch::Tensor& projections,
                       const std::filesystem::path& path);
/// Scatter plot of the 2-d projections colored by label.
void write_scatter(const EmbeddingSet& data, const torch::Tensor& projections,
                   const std::filesystem::path& path);

}  // namespace synthdet::dimred
