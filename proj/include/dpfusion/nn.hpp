#pragma once

#include <string>
#include <vector>

#include "dpfusion/tensor.hpp"

namespace dpfusion::ad {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

// Fully connected layer, weights U[-1/sqrt(fan_in), +1/sqrt(fan_in)].
struct Linear {
  Tensor weight;  // {out, in}
  Tensor bias;    // {out}
  int in = 0;
  int out = 0;

  Linear() = default;
  Linear(int in_dim, int out_dim, Rng& rng);
  Tensor forward(const Tensor& x) const;
  void collect(const std::string& prefix, std::vector<NamedTensor>& out) const;
};

// Minimal gated recurrent cell (single forget gate):
//   f  = sigmoid(Wf [x; h] + bf)
//   hc = tanh(Wc [x; f*h] + bc)
//   h' = (1 - f) * h + f * hc
struct GatedCell {
  Tensor wf, bf, wc, bc;
  int input = 0;
  int hidden = 0;

  GatedCell() = default;
  GatedCell(int input_dim, int hidden_dim, Rng& rng);
  Tensor forward(const Tensor& x, const Tensor& h) const;
  Tensor initial_state() const { return Tensor::zeros({hidden}); }
  void collect(const std::string& prefix, std::vector<NamedTensor>& out) const;
};

enum class HeadActivation { kLinear, kSigmoid };

// One hidden tanh layer, then a linear (optionally sigmoid-squashed) output.
struct Mlp {
  Linear l1, l2;
  HeadActivation out_act = HeadActivation::kLinear;

  Mlp() = default;
  Mlp(int in_dim, int hidden_dim, int out_dim, HeadActivation act, Rng& rng);
  Tensor forward(const Tensor& x) const;
  void collect(const std::string& prefix, std::vector<NamedTensor>& out) const;
};

// ----- optimizers -----------------------------------------------------------

// One step moves parameters against their gradients, then zeroes the grads.
class Sgd {
 public:
  explicit Sgd(std::vector<Tensor> params) : params_(std::move(params)) {}
  void step(double learning_rate);

 private:
  std::vector<Tensor> params_;
};

class Adam {
 public:
  explicit Adam(std::vector<Tensor> params, double beta1 = 0.9,
                double beta2 = 0.999, double epsilon = 1e-8);
  void step(double learning_rate);

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_, v_;
  double beta1_, beta2_, epsilon_;
  long t_ = 0;
};

// ----- checkpoints ----------------------------------------------------------

// Flat binary container of little-endian doubles preceded by a JSON manifest
// (names, shapes, seed, format version).
void save_checkpoint(const std::string& path,
                     const std::vector<NamedTensor>& params,
                     std::uint64_t seed);

// Loads values into matching names; throws DataError on any mismatch.
void load_checkpoint(const std::string& path, std::vector<NamedTensor> params,
                     std::uint64_t* seed_out = nullptr);

std::vector<Tensor> tensors_of(const std::vector<NamedTensor>& named);

}  // namespace dpfusion::ad
