#include "dpfusion/nn.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "json.hpp"

namespace dpfusion::ad {

namespace {

Tensor uniform_param(std::vector<int> shape, int fan_in, Rng& rng) {
  int n = 1;
  for (int s : shape) n *= s;
  double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(-bound, bound);
  return Tensor::parameter(std::move(v), std::move(shape));
}

}  // namespace

Linear::Linear(int in_dim, int out_dim, Rng& rng) : in(in_dim), out(out_dim) {
  weight = uniform_param({out, in}, in, rng);
  bias = uniform_param({out}, in, rng);
}

Tensor Linear::forward(const Tensor& x) const {
  return add(matvec(weight, x), bias);
}

void Linear::collect(const std::string& prefix,
                     std::vector<NamedTensor>& out_params) const {
  out_params.push_back({prefix + ".weight", weight});
  out_params.push_back({prefix + ".bias", bias});
}

GatedCell::GatedCell(int input_dim, int hidden_dim, Rng& rng)
    : input(input_dim), hidden(hidden_dim) {
  int fan = input_dim + hidden_dim;
  wf = uniform_param({hidden, fan}, fan, rng);
  bf = uniform_param({hidden}, fan, rng);
  wc = uniform_param({hidden, fan}, fan, rng);
  bc = uniform_param({hidden}, fan, rng);
}

Tensor GatedCell::forward(const Tensor& x, const Tensor& h) const {
  Tensor xh = concat(x, h);
  Tensor f = sigmoid(add(matvec(wf, xh), bf));
  Tensor gated = concat(x, mul(f, h));
  Tensor hc = tanh_t(add(matvec(wc, gated), bc));
  Tensor keep = mul(add_scalar(neg(f), 1.0), h);
  return add(keep, mul(f, hc));
}

void GatedCell::collect(const std::string& prefix,
                        std::vector<NamedTensor>& out_params) const {
  out_params.push_back({prefix + ".wf", wf});
  out_params.push_back({prefix + ".bf", bf});
  out_params.push_back({prefix + ".wc", wc});
  out_params.push_back({prefix + ".bc", bc});
}

Mlp::Mlp(int in_dim, int hidden_dim, int out_dim, HeadActivation act, Rng& rng)
    : l1(in_dim, hidden_dim, rng), l2(hidden_dim, out_dim, rng), out_act(act) {}

Tensor Mlp::forward(const Tensor& x) const {
  Tensor h = tanh_t(l1.forward(x));
  Tensor y = l2.forward(h);
  if (out_act == HeadActivation::kSigmoid) y = sigmoid(y);
  return y;
}

void Mlp::collect(const std::string& prefix,
                  std::vector<NamedTensor>& out_params) const {
  l1.collect(prefix + ".l1", out_params);
  l2.collect(prefix + ".l2", out_params);
}

void Sgd::step(double learning_rate) {
  for (auto& p : params_) {
    auto& v = p.values_mut();
    auto& g = p.grad();
    for (std::size_t i = 0; i < v.size(); ++i) v[i] -= learning_rate * g[i];
    p.zero_grad();
  }
}

Adam::Adam(std::vector<Tensor> params, double beta1, double beta2,
           double epsilon)
    : params_(std::move(params)), beta1_(beta1), beta2_(beta2),
      epsilon_(epsilon) {
  for (auto& p : params_) {
    m_.emplace_back(p.size(), 0.0);
    v_.emplace_back(p.size(), 0.0);
  }
}

void Adam::step(double learning_rate) {
  ++t_;
  double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto& val = params_[k].values_mut();
    auto& g = params_[k].grad();
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < val.size(); ++i) {
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
      double mhat = m[i] / bc1;
      double vhat = v[i] / bc2;
      val[i] -= learning_rate * mhat / (std::sqrt(vhat) + epsilon_);
    }
    params_[k].zero_grad();
  }
}

namespace {
constexpr char kMagic[8] = {'D', 'P', 'F', 'C', 'K', 'P', 'T', '1'};
}

void save_checkpoint(const std::string& path,
                     const std::vector<NamedTensor>& params,
                     std::uint64_t seed) {
  nlohmann::json manifest;
  manifest["version"] = 1;
  manifest["seed"] = seed;
  auto& entries = manifest["tensors"];
  entries = nlohmann::json::array();
  for (const auto& [name, t] : params) {
    entries.push_back({{"name", name}, {"shape", t.shape()}});
  }
  std::string mtext = manifest.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open checkpoint for writing: " + path);
  out.write(kMagic, sizeof(kMagic));
  std::uint64_t mlen = mtext.size();
  out.write(reinterpret_cast<const char*>(&mlen), sizeof(mlen));
  out.write(mtext.data(), static_cast<std::streamsize>(mlen));
  for (const auto& [name, t] : params) {
    const auto& v = t.values();
    out.write(reinterpret_cast<const char*>(v.data()),
              static_cast<std::streamsize>(v.size() * sizeof(double)));
  }
  if (!out) throw DataError("checkpoint write failed: " + path);
}

void load_checkpoint(const std::string& path, std::vector<NamedTensor> params,
                     std::uint64_t* seed_out) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint: " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw DataError("bad checkpoint magic: " + path);
  }
  std::uint64_t mlen = 0;
  in.read(reinterpret_cast<char*>(&mlen), sizeof(mlen));
  std::string mtext(mlen, '\0');
  in.read(mtext.data(), static_cast<std::streamsize>(mlen));
  if (!in) throw DataError("truncated checkpoint manifest: " + path);
  nlohmann::json manifest = nlohmann::json::parse(mtext);
  if (manifest.at("version").get<int>() != 1) {
    throw DataError("unsupported checkpoint version");
  }
  if (seed_out) *seed_out = manifest.at("seed").get<std::uint64_t>();

  const auto& entries = manifest.at("tensors");
  if (entries.size() != params.size()) {
    throw DataError("checkpoint tensor count mismatch");
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    const auto& e = entries[k];
    if (e.at("name").get<std::string>() != params[k].name) {
      throw DataError("checkpoint tensor name mismatch: expected " +
                      params[k].name);
    }
    auto shape = e.at("shape").get<std::vector<int>>();
    if (shape != params[k].tensor.shape()) {
      throw DataError("checkpoint shape mismatch for " + params[k].name);
    }
    auto& v = params[k].tensor.values_mut();
    in.read(reinterpret_cast<char*>(v.data()),
            static_cast<std::streamsize>(v.size() * sizeof(double)));
    if (!in) throw DataError("truncated checkpoint data: " + path);
  }
}

std::vector<Tensor> tensors_of(const std::vector<NamedTensor>& named) {
  std::vector<Tensor> out;
  out.reserve(named.size());
  for (const auto& nt : named) out.push_back(nt.tensor);
  return out;
}

}  // namespace dpfusion::ad
