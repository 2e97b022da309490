#pragma once

#include "avur/numerics/tape.hpp"

#include <optional>
#include <string>

namespace avur {

struct AttentionConfig {
  Eigen::Index model_dim = 0;
  Eigen::Index num_heads = 1;

  Eigen::Index head_dim() const { return model_dim / num_heads; }
  void validate() const {
    if (num_heads < 1) throw std::invalid_argument("AttentionConfig: num_heads must be >= 1");
    if (model_dim < 1 || model_dim % num_heads != 0)
      throw std::invalid_argument("AttentionConfig: model_dim " + std::to_string(model_dim) +
                                  " not divisible by num_heads " + std::to_string(num_heads));
  }
};

// Low-rank update W + scaling * A^T B^T in row-vector form: y = x W + s * drop(x) A^T B^T.
// B starts at zero, so an attached adapter leaves the layer unchanged until trained.
struct LoraAdapter {
  Param a;  // rank x in
  Param b;  // out x rank
  int rank = 0;
  double scaling = 1.0;
  double dropout = 0.0;
};

// Inverted dropout applied to the LoRA input only; absent means evaluation mode.
struct DropoutContext {
  Rng* rng = nullptr;
};

struct Linear {
  Param weight;  // in x out
  Param bias;    // 1 x out
  bool has_bias = true;
  std::optional<LoraAdapter> lora;

  static Linear init(const std::string& name, Eigen::Index in, Eigen::Index out, Rng& rng,
                     bool with_bias = true);
  static Linear from(const std::string& name, Matrix w, Matrix b);

  Eigen::Index in_dim() const { return weight.rows(); }
  Eigen::Index out_dim() const { return weight.cols(); }

  Var forward(Tape& t, Var x, const DropoutContext* drop = nullptr);
  void collect(ParamRefs& out);
};

struct LayerNormParams {
  Param gain;
  Param bias;
  double eps = 1e-5;

  static LayerNormParams init(const std::string& name, Eigen::Index dim);
  Var forward(Tape& t, Var x);
  void collect(ParamRefs& out);
};

struct MultiHeadAttention {
  AttentionConfig cfg;
  Linear q, k, v, o;

  struct Memory {
    Var keys;    // already projected
    Var values;  // already projected
  };

  static MultiHeadAttention init(const std::string& name, AttentionConfig cfg, Rng& rng);

  Memory project_memory(Tape& t, Var key_in, Var value_in, const DropoutContext* drop = nullptr);
  Var attend(Tape& t, Var query_in, const Memory& mem, AttentionMask mask = {},
             const DropoutContext* drop = nullptr);
  Var forward(Tape& t, Var query_in, Var key_in, Var value_in, AttentionMask mask = {},
              const DropoutContext* drop = nullptr);
  void collect(ParamRefs& out);
};

// Per-head scaled dot-product attention (scale 1/sqrt(D/H)), heads concatenated
// and passed through the output projection.
Var mha(Tape& t, Var q, Var k, Var v, MultiHeadAttention& params, AttentionMask mask = {});

struct FeedForward {
  Linear in, out;

  static FeedForward init(const std::string& name, Eigen::Index dim, Eigen::Index hidden, Rng& rng);
  Var forward(Tape& t, Var x);
  void collect(ParamRefs& out);
};

void set_requires_grad(const ParamRefs& params, bool on);
size_t parameter_count(const ParamRefs& params);

}  // namespace avur
