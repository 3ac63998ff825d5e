#include "mssm/diff/nets.hpp"

#include <cmath>

namespace mssm::diff {

Var activate(const Var& x, Activation a) {
    switch (a) {
        case Activation::Elu: return elu(x);
        case Activation::Tanh: return tanh_v(x);
        case Activation::Identity: return x;
    }
    throw UsageError("unknown activation");
}

Tensor glorot_uniform(std::int64_t fan_in, std::int64_t fan_out, Rng& rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    return rng.uniform_tensor({fan_in, fan_out}, -bound, bound);
}

void MlpSpec::validate() const {
    if (input < 1) throw UsageError("mlp: input width must be >= 1");
    if (heads.empty() && hidden.empty())
        throw UsageError("mlp: needs at least one layer (hidden or head)");
    for (auto w : hidden)
        if (w < 1) throw UsageError("mlp: hidden widths must be >= 1");
    for (const auto& [name, w] : heads)
        if (w < 1) throw UsageError("mlp: head width must be >= 1 (" + name + ")");
}

Mlp Mlp::create(ParamStore& store, const std::string& prefix, MlpSpec spec, Rng& rng) {
    spec.validate();
    Mlp m;
    m.spec_ = spec;
    std::int64_t in = spec.input;
    for (std::size_t i = 0; i < spec.hidden.size(); ++i) {
        const std::int64_t out = spec.hidden[i];
        m.ws_.push_back(&store.add(prefix + ".h" + std::to_string(i) + ".w",
                                   glorot_uniform(in, out, rng)));
        m.bs_.push_back(&store.add(prefix + ".h" + std::to_string(i) + ".b", Tensor({1, out})));
        in = out;
    }
    for (const auto& [name, width] : spec.heads) {
        Param* w = &store.add(prefix + "." + name + ".w", glorot_uniform(in, width, rng));
        Param* b = &store.add(prefix + "." + name + ".b", Tensor({1, width}));
        m.heads_.emplace_back(name, std::make_pair(w, b));
    }
    return m;
}

Mlp Mlp::attach(ParamStore& store, const std::string& prefix, MlpSpec spec) {
    spec.validate();
    Mlp m;
    m.spec_ = spec;
    for (std::size_t i = 0; i < spec.hidden.size(); ++i) {
        m.ws_.push_back(&store.at(prefix + ".h" + std::to_string(i) + ".w"));
        m.bs_.push_back(&store.at(prefix + ".h" + std::to_string(i) + ".b"));
    }
    for (const auto& [name, width] : spec.heads) {
        Param* w = &store.at(prefix + "." + name + ".w");
        Param* b = &store.at(prefix + "." + name + ".b");
        m.heads_.emplace_back(name, std::make_pair(w, b));
    }
    return m;
}

Var Mlp::hidden_out(Tape& t, const Var& x) const {
    if (x.cols() != spec_.input)
        throw ShapeError("mlp", "input width " + std::to_string(x.cols()) + " != spec " +
                                    std::to_string(spec_.input));
    Var h = x;
    for (std::size_t i = 0; i < ws_.size(); ++i) {
        h = add_rowvec(matmul(h, t.param(*ws_[i])), t.param(*bs_[i]));
        h = activate(h, spec_.act);
    }
    return h;
}

Var Mlp::head(Tape& t, const Var& h, const std::string& name) const {
    for (const auto& [n, wb] : heads_)
        if (n == name) return add_rowvec(matmul(h, t.param(*wb.first)), t.param(*wb.second));
    throw UsageError("mlp: unknown head " + name);
}

Var Mlp::apply(Tape& t, const Var& x, const std::string& head_name) const {
    return head(t, hidden_out(t, x), head_name);
}

Gru Gru::create(ParamStore& store, const std::string& prefix, std::int64_t input,
                std::int64_t hidden, Rng& rng) {
    Gru g;
    g.input = input;
    g.hidden = hidden;
    const std::int64_t in = input + hidden;
    g.wu = &store.add(prefix + ".update.w", glorot_uniform(in, hidden, rng));
    g.bu = &store.add(prefix + ".update.b", Tensor({1, hidden}));
    g.wr = &store.add(prefix + ".reset.w", glorot_uniform(in, hidden, rng));
    g.br = &store.add(prefix + ".reset.b", Tensor({1, hidden}));
    g.wc = &store.add(prefix + ".cand.w", glorot_uniform(in, hidden, rng));
    g.bc = &store.add(prefix + ".cand.b", Tensor({1, hidden}));
    return g;
}

Gru Gru::attach(ParamStore& store, const std::string& prefix, std::int64_t input,
                std::int64_t hidden) {
    Gru g;
    g.input = input;
    g.hidden = hidden;
    g.wu = &store.at(prefix + ".update.w");
    g.bu = &store.at(prefix + ".update.b");
    g.wr = &store.at(prefix + ".reset.w");
    g.br = &store.at(prefix + ".reset.b");
    g.wc = &store.at(prefix + ".cand.w");
    g.bc = &store.at(prefix + ".cand.b");
    return g;
}

Var Gru::cell(Tape& t, const Var& x, const Var& h) const {
    if (x.cols() != input || h.cols() != hidden || x.rows() != h.rows())
        throw ShapeError("gru_cell", "widths [" + std::to_string(x.cols()) + "," +
                                         std::to_string(h.cols()) + "] do not match params [" +
                                         std::to_string(input) + "," + std::to_string(hidden) + "]");
    Var xh = concat_cols({x, h});
    Var u = sigmoid(add_rowvec(matmul(xh, t.param(*wu)), t.param(*bu)));
    Var r = sigmoid(add_rowvec(matmul(xh, t.param(*wr)), t.param(*br)));
    Var xrh = concat_cols({x, mul(r, h)});
    Var c = tanh_v(add_rowvec(matmul(xrh, t.param(*wc)), t.param(*bc)));
    // h' = (1-u)*h + u*c
    return add(mul(sub(make_leaf(Tensor::full(u.value().shape(), 1.0), false), u), h), mul(u, c));
}

std::int64_t ConvEncoderSpec::out_hw() const {
    std::int64_t hw = in_hw;
    for (std::size_t i = 0; i < channels.size(); ++i) hw = (hw - kernel) / stride + 1;
    return hw;
}

std::int64_t ConvEncoderSpec::flat_dim() const {
    return channels.back() * out_hw() * out_hw();
}

ConvEncoder ConvEncoder::create(ParamStore& store, const std::string& prefix, ConvEncoderSpec spec,
                                Rng& rng) {
    ConvEncoder e;
    e.spec_ = spec;
    std::int64_t in_c = spec.in_channels;
    for (std::size_t i = 0; i < spec.channels.size(); ++i) {
        const std::int64_t oc = spec.channels[i];
        const std::int64_t fan_in = in_c * spec.kernel * spec.kernel;
        e.ws_.push_back(&store.add(prefix + ".c" + std::to_string(i) + ".w",
                                   glorot_uniform(oc, fan_in, rng).reshaped({oc, fan_in})));
        e.bs_.push_back(&store.add(prefix + ".c" + std::to_string(i) + ".b", Tensor({1, oc})));
        in_c = oc;
    }
    e.proj_w_ = &store.add(prefix + ".proj.w", glorot_uniform(spec.flat_dim(), spec.embed_dim, rng));
    e.proj_b_ = &store.add(prefix + ".proj.b", Tensor({1, spec.embed_dim}));
    return e;
}

ConvEncoder ConvEncoder::attach(ParamStore& store, const std::string& prefix,
                                ConvEncoderSpec spec) {
    ConvEncoder e;
    e.spec_ = spec;
    for (std::size_t i = 0; i < spec.channels.size(); ++i) {
        e.ws_.push_back(&store.at(prefix + ".c" + std::to_string(i) + ".w"));
        e.bs_.push_back(&store.at(prefix + ".c" + std::to_string(i) + ".b"));
    }
    e.proj_w_ = &store.at(prefix + ".proj.w");
    e.proj_b_ = &store.at(prefix + ".proj.b");
    return e;
}

Var ConvEncoder::apply(Tape& t, const Var& x) const {
    if (x.value().rank() != 4 || x.value().dim(1) != spec_.in_channels ||
        x.value().dim(2) != spec_.in_hw || x.value().dim(3) != spec_.in_hw)
        throw ShapeError("conv_encoder", "input shape " + Tensor::shape_str(x.shape()) +
                                             " does not match spec");
    Var h = x;
    for (std::size_t i = 0; i < ws_.size(); ++i) {
        h = conv2d(h, t.param(*ws_[i]), t.param(*bs_[i]), spec_.kernel, spec_.kernel, spec_.stride);
        h = activate(h, spec_.act);
    }
    const std::int64_t b = x.value().dim(0);
    Var flat = reshape(h, {b, spec_.flat_dim()});
    return add_rowvec(matmul(flat, t.param(*proj_w_)), t.param(*proj_b_));
}

std::int64_t ConvDecoderSpec::seed_hw() const {
    // invert (hw-1)*stride + kernel applied (#channels) times from out_hw
    std::int64_t hw = out_hw;
    for (std::size_t i = 0; i < channels.size(); ++i) {
        if ((hw - kernel) % stride != 0)
            throw UsageError("conv_decoder: output size not reachable with kernel/stride");
        hw = (hw - kernel) / stride + 1;
    }
    return hw;
}

ConvDecoder ConvDecoder::create(ParamStore& store, const std::string& prefix, ConvDecoderSpec spec,
                                Rng& rng) {
    ConvDecoder d;
    d.spec_ = spec;
    const std::int64_t shw = spec.seed_hw();
    const std::int64_t seed_flat = spec.channels.front() * shw * shw;
    d.seed_w_ = &store.add(prefix + ".seed.w", glorot_uniform(spec.latent_dim, seed_flat, rng));
    d.seed_b_ = &store.add(prefix + ".seed.b", Tensor({1, seed_flat}));
    for (std::size_t i = 0; i < spec.channels.size(); ++i) {
        const std::int64_t in_c = spec.channels[i];
        const std::int64_t oc = (i + 1 < spec.channels.size()) ? spec.channels[i + 1]
                                                               : spec.out_channels;
        const std::int64_t cols = oc * spec.kernel * spec.kernel;
        d.ws_.push_back(&store.add(prefix + ".d" + std::to_string(i) + ".w",
                                   glorot_uniform(in_c, cols, rng).reshaped({in_c, cols})));
        d.bs_.push_back(&store.add(prefix + ".d" + std::to_string(i) + ".b", Tensor({1, oc})));
    }
    return d;
}

ConvDecoder ConvDecoder::attach(ParamStore& store, const std::string& prefix,
                                ConvDecoderSpec spec) {
    ConvDecoder d;
    d.spec_ = spec;
    d.seed_w_ = &store.at(prefix + ".seed.w");
    d.seed_b_ = &store.at(prefix + ".seed.b");
    for (std::size_t i = 0; i < spec.channels.size(); ++i) {
        d.ws_.push_back(&store.at(prefix + ".d" + std::to_string(i) + ".w"));
        d.bs_.push_back(&store.at(prefix + ".d" + std::to_string(i) + ".b"));
    }
    return d;
}

Var ConvDecoder::apply(Tape& t, const Var& z) const {
    if (z.cols() != spec_.latent_dim)
        throw ShapeError("conv_decoder", "latent width mismatch");
    const std::int64_t b = z.rows();
    const std::int64_t shw = spec_.seed_hw();
    Var seed = add_rowvec(matmul(z, t.param(*seed_w_)), t.param(*seed_b_));
    Var h = reshape(activate(seed, spec_.act), {b, spec_.channels.front(), shw, shw});
    for (std::size_t i = 0; i < ws_.size(); ++i) {
        h = conv2d_transpose(h, t.param(*ws_[i]), t.param(*bs_[i]), spec_.kernel, spec_.kernel,
                             spec_.stride);
        if (i + 1 < ws_.size()) h = activate(h, spec_.act);
    }
    return h;  // mean image; caller applies no squashing (std fixed at 1)
}

LayerNormProjection LayerNormProjection::create(ParamStore& store, const std::string& prefix,
                                                std::int64_t input, std::int64_t proj_dim,
                                                Rng& rng) {
    LayerNormProjection p;
    p.w_ = &store.add(prefix + ".w", glorot_uniform(input, proj_dim, rng));
    p.b_ = &store.add(prefix + ".b", Tensor({1, proj_dim}));
    p.gain_ = &store.add(prefix + ".ln.gain", Tensor::full({1, proj_dim}, 1.0));
    p.bias_ = &store.add(prefix + ".ln.bias", Tensor({1, proj_dim}));
    return p;
}

LayerNormProjection LayerNormProjection::attach(ParamStore& store, const std::string& prefix,
                                                std::int64_t input, std::int64_t proj_dim) {
    LayerNormProjection p;
    p.w_ = &store.at(prefix + ".w");
    p.b_ = &store.at(prefix + ".b");
    p.gain_ = &store.at(prefix + ".ln.gain");
    p.bias_ = &store.at(prefix + ".ln.bias");
    (void)input;
    (void)proj_dim;
    return p;
}

Var LayerNormProjection::apply(Tape& t, const Var& x) const {
    Var y = add_rowvec(matmul(x, t.param(*w_)), t.param(*b_));
    return layer_norm(y, t.param(*gain_), t.param(*bias_));
}

}  // namespace mssm::diff
