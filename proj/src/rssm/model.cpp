#include "mssm/rssm/model.hpp"

#include <cstring>

namespace mssm::rssm {

using namespace diff;

RssmModel::RssmModel(RssmConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
    cfg_.validate();
    Rng rng(seed);

    for (const auto& m : cfg_.modalities) {
        ModalityNets nets;
        Rng mod_rng = rng.child(Rng::hash_str("enc." + m.id));
        if (m.kind == ModalityKind::Vector) {
            MlpSpec enc{m.vec_dim, m.enc_hidden, Activation::Elu, {{"embed", m.embed_dim}}};
            nets.vec_enc = Mlp::create(store_, "enc." + m.id, enc, mod_rng);
        } else {
            ConvEncoderSpec enc;
            enc.in_channels = m.image_channels;
            enc.in_hw = m.image_hw;
            enc.channels = m.conv_channels;
            enc.kernel = m.conv_kernel;
            enc.stride = m.conv_stride;
            enc.embed_dim = m.embed_dim;
            nets.img_enc = ConvEncoder::create(store_, "enc." + m.id, enc, mod_rng);
        }
        if (m.loss == LossKind::Reconstruction) {
            Rng dec_rng = rng.child(Rng::hash_str("dec." + m.id));
            if (m.kind == ModalityKind::Vector) {
                MlpSpec dec{cfg_.feature_dim(), m.dec_hidden, Activation::Elu,
                            {{"mean", m.vec_dim}}};
                nets.vec_dec = Mlp::create(store_, "dec." + m.id, dec, dec_rng);
            } else {
                ConvDecoderSpec dec;
                dec.latent_dim = cfg_.feature_dim();
                dec.out_channels = m.image_channels;
                dec.out_hw = m.image_hw;
                std::vector<std::int64_t> rev(m.conv_channels.rbegin(), m.conv_channels.rend());
                dec.channels = rev;
                dec.kernel = m.conv_kernel;
                dec.stride = m.conv_stride;
                nets.img_dec = ConvDecoder::create(store_, "dec." + m.id, dec, dec_rng);
            }
        } else {
            Rng head_rng = rng.child(Rng::hash_str("score." + m.id));
            nets.rho_o = LayerNormProjection::create(store_, "score." + m.id + ".rho_o",
                                                     m.embed_dim, cfg_.proj_dim, head_rng);
            // rho_z = ELU trunk, then affine to proj_dim + layer norm
            MlpSpec ztrunk{cfg_.feature_dim(), cfg_.rho_z_hidden, Activation::Elu, {}};
            nets.rho_z_mlp = Mlp::create(store_, "score." + m.id + ".rho_z", ztrunk, head_rng);
            const std::int64_t trunk_out =
                cfg_.rho_z_hidden.empty() ? cfg_.feature_dim() : cfg_.rho_z_hidden.back();
            nets.rho_z_out = LayerNormProjection::create(store_, "score." + m.id + ".rho_z.out",
                                                         trunk_out, cfg_.proj_dim, head_rng);
            nets.log_lambda = &store_.add("score." + m.id + ".log_lambda",
                                          Tensor::scalar(cfg_.init_log_lambda));
        }
        nets_[m.id] = std::move(nets);
    }

    Rng core_rng = rng.child(Rng::hash_str("core"));
    det_mlp_ = Mlp::create(store_, "det",
                           MlpSpec{cfg_.s_dim + cfg_.action_dim, cfg_.det_hidden, Activation::Elu,
                                   {{"out", cfg_.det_out_dim}}},
                           core_rng);
    gru_ = Gru::create(store_, "gru", cfg_.det_out_dim, cfg_.h_dim, core_rng);
    dyn_mlp_ = Mlp::create(store_, "dyn",
                           MlpSpec{cfg_.h_dim, cfg_.dyn_hidden, Activation::Elu,
                                   {{"mean", cfg_.s_dim}, {"rawstd", cfg_.s_dim}}},
                           core_rng);
    var_mlp_ = Mlp::create(store_, "post",
                           MlpSpec{cfg_.h_dim + cfg_.embed_dim(), cfg_.var_hidden, Activation::Elu,
                                   {{"mean", cfg_.s_dim}, {"rawstd", cfg_.s_dim}}},
                           core_rng);
    reward_mlp_ = Mlp::create(store_, "reward",
                              MlpSpec{cfg_.feature_dim(), cfg_.reward_hidden, Activation::Elu,
                                      {{"mean", 1}}},
                              core_rng);
    if (cfg_.any_cpc())
        invdyn_mlp_ = Mlp::create(store_, "invdyn",
                                  MlpSpec{2 * cfg_.feature_dim(), cfg_.invdyn_hidden,
                                          Activation::Elu, {{"action", cfg_.action_dim}}},
                                  core_rng);
}

ObsVars RssmModel::lift(Tape& t, const ObsBatch& obs) const {
    ObsVars out;
    for (const auto& [id, tensor] : obs) out.emplace(id, t.constant(tensor));
    return out;
}

std::map<std::string, Var> RssmModel::encode_each(Tape& t, const ObsVars& obs) const {
    std::map<std::string, Var> out;
    for (const auto& m : cfg_.modalities) {
        auto it = obs.find(m.id);
        if (it == obs.end())
            throw ConfigError("observation bundle is missing modality '" + m.id + "'");
        const auto& nets = nets_.at(m.id);
        if (m.kind == ModalityKind::Vector)
            out.emplace(m.id, nets.vec_enc->apply(t, it->second, "embed"));
        else
            out.emplace(m.id, nets.img_enc->apply(t, it->second));
    }
    for (const auto& [id, v] : obs)
        if (!out.count(id)) throw ConfigError("bundle carries undeclared modality '" + id + "'");
    return out;
}

Var RssmModel::encode(Tape& t, const ObsVars& obs) const {
    auto each = encode_each(t, obs);
    std::vector<Var> parts;
    for (const auto& m : cfg_.modalities) parts.push_back(each.at(m.id));
    return parts.size() == 1 ? parts[0] : concat_cols(parts);
}

Var RssmModel::det_step(Tape& t, const Var& s_prev, const Var& a_prev, const Var& h_prev) const {
    Var x = det_mlp_->apply(t, concat_cols({s_prev, a_prev}), "out");
    return gru_->cell(t, x, h_prev);
}

GaussVar RssmModel::head_to_gauss(Tape& t, const Mlp& mlp, const Var& input) const {
    Var hidden = mlp.hidden_out(t, input);
    Var mean = mlp.head(t, hidden, "mean");
    Var stdv = dists::std_from_raw(mlp.head(t, hidden, "rawstd"));
    return GaussVar{mean, stdv};
}

GaussVar RssmModel::prior_dist(Tape& t, const Var& h) const {
    return head_to_gauss(t, *dyn_mlp_, h);
}

GaussVar RssmModel::posterior_dist(Tape& t, const Var& h, const Var& embed) const {
    return head_to_gauss(t, *var_mlp_, concat_cols({h, embed}));
}

LatentState RssmModel::initial_state(Tape& t, std::int64_t batch) const {
    LatentState st;
    st.h = t.constant(Tensor({batch, cfg_.h_dim}));
    st.s = t.constant(Tensor({batch, cfg_.s_dim}));
    st.s_dist = GaussVar{t.constant(Tensor({batch, cfg_.s_dim})),
                         t.constant(Tensor::full({batch, cfg_.s_dim}, 1.0))};
    return st;
}

std::vector<RolloutStep> RssmModel::posterior_rollout(Tape& t, const SeqBatch& batch,
                                                      const std::vector<Tensor>& noise,
                                                      bool sample_mode,
                                                      const LatentState* init) const {
    const std::int64_t T = batch.length();
    if (T == 0) throw UsageError("posterior_rollout: empty sequence");
    if (static_cast<std::int64_t>(batch.prev_action.size()) != T)
        throw UsageError("posterior_rollout: |obs| != |actions|");
    if (sample_mode && static_cast<std::int64_t>(noise.size()) != T)
        throw UsageError("posterior_rollout: need one noise tensor per step");

    std::vector<RolloutStep> steps;
    steps.reserve(T);
    LatentState prev = init ? *init : initial_state(t, batch.batch());
    for (std::int64_t i = 0; i < T; ++i) {
        Var h = det_step(t, prev.s, t.constant(batch.prev_action[i]), prev.h);
        GaussVar prior = prior_dist(t, h);
        auto embeds = encode_each(t, lift(t, batch.obs[i]));
        std::vector<Var> parts;
        for (const auto& m : cfg_.modalities) parts.push_back(embeds.at(m.id));
        Var embed = parts.size() == 1 ? parts[0] : concat_cols(parts);
        GaussVar post = posterior_dist(t, h, embed);
        Var s = sample_mode ? dists::rsample(post, t.constant(noise[i])) : post.mean;
        RolloutStep step;
        step.state = LatentState{h, s, post};
        step.prior = prior;
        step.embeds = std::move(embeds);
        steps.push_back(std::move(step));
        prev = steps.back().state;
    }
    return steps;
}

ImaginedTrajectory RssmModel::imagine(Tape& t, const LatentState& start, const PolicyFn& policy,
                                      std::int64_t horizon, Rng& noise_rng) const {
    if (horizon < 1) throw UsageError("imagine: horizon must be >= 1");
    const std::int64_t B = start.h.rows();
    ImaginedTrajectory traj;
    traj.states.push_back(start);
    for (std::int64_t k = 0; k < horizon; ++k) {
        const LatentState& cur = traj.states.back();
        Var feats = concat_cols({cur.h, cur.s});
        Var action = policy(t, feats);
        Var h = det_step(t, cur.s, action, cur.h);
        GaussVar prior = prior_dist(t, h);
        Var s = dists::rsample(prior, t.constant(noise_rng.normal_tensor({B, cfg_.s_dim})));
        LatentState next{h, s, prior};
        traj.actions.push_back(action);
        traj.states.push_back(next);
        traj.reward_means.push_back(predict_reward(t, next).mean);
    }
    return traj;
}

GaussVar RssmModel::predict_reward(Tape& t, const LatentState& state) const {
    Var mean = reward_mlp_->apply(t, concat_cols({state.h, state.s}), "mean");
    Var stdv = t.constant(Tensor::full({state.h.rows(), 1}, 1.0));
    return GaussVar{mean, stdv};
}

Var RssmModel::decode_modality(Tape& t, const LatentState& state, const std::string& id) const {
    const auto& m = cfg_.modality(id);
    if (m.loss != LossKind::Reconstruction)
        throw ConfigError("modality '" + id + "' is contrastive; it has no decoder");
    const auto& nets = nets_.at(id);
    Var z = concat_cols({state.h, state.s});
    if (m.kind == ModalityKind::Vector) return nets.vec_dec->apply(t, z, "mean");
    return nets.img_dec->apply(t, z);
}

Var RssmModel::policy_features(Tape& t, const LatentState& state, bool detached) const {
    Var feats = concat_cols({state.h, state.s_dist.mean});
    return detached ? diff::detach(feats) : feats;
    (void)t;
}

Var RssmModel::state_features(Tape& t, const LatentState& state) const {
    (void)t;
    return concat_cols({state.h, state.s});
}

Var RssmModel::rho_z(Tape& t, const std::string& id, const Var& feats) const {
    const auto& nets = nets_.at(id);
    Var trunk = nets.rho_z_mlp->hidden_out(t, feats);
    return nets.rho_z_out->apply(t, trunk);
}

Var RssmModel::score_log_matrix(Tape& t, const std::string& id, const Var& state_features,
                                const Var& embeds) const {
    const auto& nets = nets_.at(id);
    if (!nets.rho_o) throw ConfigError("modality '" + id + "' has no score head");
    Var po = nets.rho_o->apply(t, embeds);           // [I x proj]
    Var pz = rho_z(t, id, state_features);           // [I x proj]
    Var inv_lambda = exp_v(neg(t.param(*nets.log_lambda)));
    return scale_by(matmul_nt(pz, po), inv_lambda);  // [i][j] = f(z_i, o_j) in log space
}

Var RssmModel::score_variational(Tape& t, const std::string& id, const Var& embed_row,
                                 const LatentState& state) const {
    Var feats = state_features(t, state);
    return exp_v(score_log_matrix(t, id, feats, embed_row));
}

Var RssmModel::score_predictive(Tape& t, const std::string& id, const Var& next_embed_row,
                                const LatentState& forwarded_state) const {
    Var feats = state_features(t, forwarded_state);
    return exp_v(score_log_matrix(t, id, feats, next_embed_row));
}

Var RssmModel::inverse_dynamics(Tape& t, const LatentState& z_t, const LatentState& z_next) const {
    if (!invdyn_mlp_) throw ConfigError("inverse dynamics head not configured (no CPC modality)");
    Var joint = concat_cols({state_features(t, z_t), state_features(t, z_next)});
    return invdyn_mlp_->apply(t, joint, "action");
}

FilterState RssmModel::initial_filter() const {
    return FilterState{Tensor({1, cfg_.h_dim}), Tensor({1, cfg_.s_dim}), Tensor({1, cfg_.s_dim})};
}

FilterState RssmModel::filter_step(const FilterState& prev, const ObsBatch& obs,
                                   const Tensor& prev_action, bool eval_mode, Rng& rng) const {
    Tape t;
    Var h = det_step(t, t.constant(prev.s), t.constant(prev_action), t.constant(prev.h));
    Var embed = encode(t, lift(t, obs));
    GaussVar post = posterior_dist(t, h, embed);
    FilterState out;
    out.h = h.value();
    out.s_mean = post.mean.value();
    if (eval_mode) {
        out.s = post.mean.value();
    } else {
        Tensor noise = rng.normal_tensor({1, cfg_.s_dim});
        out.s = dists::rsample(post, t.constant(noise)).value();
    }
    return out;
}

Tensor RssmModel::features_value(const FilterState& f) const {
    Tensor out({1, cfg_.feature_dim()});
    std::memcpy(out.data(), f.h.data(), static_cast<std::size_t>(cfg_.h_dim) * sizeof(double));
    std::memcpy(out.data() + cfg_.h_dim, f.s_mean.data(),
                static_cast<std::size_t>(cfg_.s_dim) * sizeof(double));
    return out;
}

std::uint64_t RssmModel::param_hash() const {
    std::uint64_t h = 1469598103934665603ULL;
    auto& self = const_cast<RssmModel&>(*this);
    for (Param* p : self.store_.all()) {
        for (unsigned char c : p->name) {
            h ^= c;
            h *= 1099511628211ULL;
        }
        const auto* bytes = reinterpret_cast<const unsigned char*>(p->value.data());
        const std::size_t nb = static_cast<std::size_t>(p->value.numel()) * sizeof(double);
        for (std::size_t i = 0; i < nb; ++i) {
            h ^= bytes[i];
            h *= 1099511628211ULL;
        }
    }
    return h;
}

}  // namespace mssm::rssm
