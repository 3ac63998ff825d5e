#pragma once

#include <string>
#include <vector>

#include "mssm/diff/ops.hpp"
#include "mssm/rng.hpp"

namespace mssm::diff {

enum class Activation { Elu, Tanh, Identity };

Var activate(const Var& x, Activation a);

// Affine weights drawn uniform in +-sqrt(6/(fan_in+fan_out)), biases zero.
Tensor glorot_uniform(std::int64_t fan_in, std::int64_t fan_out, Rng& rng);

// Fully connected stack with named affine heads read off the last hidden
// layer. hidden may be empty, in which case heads map the input directly.
struct MlpSpec {
    std::int64_t input = 0;
    std::vector<std::int64_t> hidden;
    Activation act = Activation::Elu;
    std::vector<std::pair<std::string, std::int64_t>> heads;  // name -> width

    void validate() const;
    std::int64_t last_width() const { return hidden.empty() ? input : hidden.back(); }
};

class Mlp {
public:
    static Mlp create(ParamStore& store, const std::string& prefix, MlpSpec spec, Rng& rng);
    static Mlp attach(ParamStore& store, const std::string& prefix, MlpSpec spec);

    // x is [B x input]; returns last hidden activation (x itself if no hidden).
    Var hidden_out(Tape& t, const Var& x) const;
    Var head(Tape& t, const Var& h, const std::string& name) const;
    Var apply(Tape& t, const Var& x, const std::string& head_name) const;

    const MlpSpec& spec() const { return spec_; }

private:
    MlpSpec spec_;
    std::vector<Param*> ws_, bs_;
    std::vector<std::pair<std::string, std::pair<Param*, Param*>>> heads_;
    Param* find_head_w(const std::string& name) const;
};

// Gate convention:
//   u = sigmoid(W_u [x;h] + b_u)
//   r = sigmoid(W_r [x;h] + b_r)
//   c = tanh(W_c [x; r*h] + b_c)
//   h' = (1-u)*h + u*c
struct Gru {
    std::int64_t input = 0, hidden = 0;
    Param *wu = nullptr, *bu = nullptr;
    Param *wr = nullptr, *br = nullptr;
    Param *wc = nullptr, *bc = nullptr;

    static Gru create(ParamStore& store, const std::string& prefix, std::int64_t input,
                      std::int64_t hidden, Rng& rng);
    static Gru attach(ParamStore& store, const std::string& prefix, std::int64_t input,
                      std::int64_t hidden);

    Var cell(Tape& t, const Var& x, const Var& h) const;
};

// Strided conv encoder: channel stack with fixed kernel/stride per layer,
// ending in a flatten + affine projection to embed_dim.
struct ConvEncoderSpec {
    std::int64_t in_channels = 3, in_hw = 32;
    std::vector<std::int64_t> channels = {4, 8, 16};
    std::int64_t kernel = 2, stride = 2;
    Activation act = Activation::Elu;
    std::int64_t embed_dim = 64;

    std::int64_t out_hw() const;
    std::int64_t flat_dim() const;
};

class ConvEncoder {
public:
    static ConvEncoder create(ParamStore& store, const std::string& prefix, ConvEncoderSpec spec,
                              Rng& rng);
    static ConvEncoder attach(ParamStore& store, const std::string& prefix, ConvEncoderSpec spec);

    // x [B, C, H, W] -> [B x embed_dim]
    Var apply(Tape& t, const Var& x) const;
    const ConvEncoderSpec& spec() const { return spec_; }

private:
    ConvEncoderSpec spec_;
    std::vector<Param*> ws_, bs_;
    Param *proj_w_ = nullptr, *proj_b_ = nullptr;
};

// Mirror of ConvEncoder: affine from the latent to a seed grid, then
// transposed convs back up to [out_channels, out_hw, out_hw].
struct ConvDecoderSpec {
    std::int64_t latent_dim = 0;
    std::int64_t out_channels = 3, out_hw = 32;
    std::vector<std::int64_t> channels = {16, 8, 4};  // seed + intermediate
    std::int64_t kernel = 2, stride = 2;
    Activation act = Activation::Elu;

    std::int64_t seed_hw() const;
};

class ConvDecoder {
public:
    static ConvDecoder create(ParamStore& store, const std::string& prefix, ConvDecoderSpec spec,
                              Rng& rng);
    static ConvDecoder attach(ParamStore& store, const std::string& prefix, ConvDecoderSpec spec);

    // z [B x latent_dim] -> [B, out_channels, out_hw, out_hw]
    Var apply(Tape& t, const Var& z) const;
    const ConvDecoderSpec& spec() const { return spec_; }

private:
    ConvDecoderSpec spec_;
    Param *seed_w_ = nullptr, *seed_b_ = nullptr;
    std::vector<Param*> ws_, bs_;
};

// Affine projection to proj_dim followed by layer normalization with
// learnable gain/bias. Used for the score-function projections.
class LayerNormProjection {
public:
    static LayerNormProjection create(ParamStore& store, const std::string& prefix,
                                      std::int64_t input, std::int64_t proj_dim, Rng& rng);
    static LayerNormProjection attach(ParamStore& store, const std::string& prefix,
                                      std::int64_t input, std::int64_t proj_dim);

    Var apply(Tape& t, const Var& x) const;

private:
    Param *w_ = nullptr, *b_ = nullptr, *gain_ = nullptr, *bias_ = nullptr;
};

}  // namespace mssm::diff
