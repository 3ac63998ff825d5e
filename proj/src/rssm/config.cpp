#include "mssm/rssm/config.hpp"

namespace mssm::rssm {

std::string to_string(LossKind k) {
    switch (k) {
        case LossKind::Reconstruction: return "reconstruction";
        case LossKind::ContrastiveVariational: return "contrastive_variational";
        case LossKind::ContrastivePredictive: return "contrastive_predictive";
    }
    return "?";
}

std::string to_string(ModalityKind k) {
    return k == ModalityKind::Image ? "image" : "vector";
}

LossKind loss_from_string(const std::string& s) {
    if (s == "reconstruction" || s == "recon" || s == "r") return LossKind::Reconstruction;
    if (s == "contrastive_variational" || s == "cv") return LossKind::ContrastiveVariational;
    if (s == "contrastive_predictive" || s == "cpc") return LossKind::ContrastivePredictive;
    throw ConfigError("unknown loss kind: " + s);
}

ModalityKind modality_from_string(const std::string& s) {
    if (s == "image") return ModalityKind::Image;
    if (s == "vector" || s == "proprio") return ModalityKind::Vector;
    throw ConfigError("unknown modality kind: " + s);
}

void ModalityConfig::validate() const {
    if (id.empty()) throw ConfigError("modality id must be non-empty");
    if (kind == ModalityKind::Vector && vec_dim < 1)
        throw ConfigError("vector modality '" + id + "' needs vec_dim >= 1");
    if (kind == ModalityKind::Image) {
        if (image_hw < 4 || image_channels < 1)
            throw ConfigError("image modality '" + id + "' has degenerate shape");
        if (conv_channels.empty())
            throw ConfigError("image modality '" + id + "' needs a conv channel stack");
    }
    if (embed_dim < 1) throw ConfigError("modality '" + id + "' needs embed_dim >= 1");
}

void RssmConfig::validate() const {
    if (h_dim < 1 || s_dim < 1 || action_dim < 1)
        throw ConfigError("state/action widths must be >= 1");
    if (modalities.empty()) throw ConfigError("at least one modality required");
    for (const auto& m : modalities) m.validate();
    for (std::size_t i = 0; i < modalities.size(); ++i)
        for (std::size_t j = i + 1; j < modalities.size(); ++j)
            if (modalities[i].id == modalities[j].id)
                throw ConfigError("duplicate modality id: " + modalities[i].id);
}

std::int64_t RssmConfig::embed_dim() const {
    std::int64_t d = 0;
    for (const auto& m : modalities) d += m.embed_dim;
    return d;
}

const ModalityConfig& RssmConfig::modality(const std::string& id) const {
    for (const auto& m : modalities)
        if (m.id == id) return m;
    throw ConfigError("unknown modality: " + id);
}

bool RssmConfig::any_cpc() const {
    for (const auto& m : modalities)
        if (m.loss == LossKind::ContrastivePredictive) return true;
    return false;
}

bool RssmConfig::any_contrastive() const {
    for (const auto& m : modalities)
        if (m.contrastive()) return true;
    return false;
}

RssmConfig RssmConfig::desk_default() {
    RssmConfig c;
    c.h_dim = 64;
    c.s_dim = 16;
    c.det_hidden = {64};
    c.det_out_dim = 64;
    c.dyn_hidden = {64};
    c.var_hidden = {64};
    c.reward_hidden = {64, 64};
    c.invdyn_hidden = {64, 64};
    c.rho_z_hidden = {64, 64};
    return c;
}

}  // namespace mssm::rssm
