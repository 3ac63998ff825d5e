#pragma once

#include <string>

#include "mssm/diff/graph.hpp"

namespace mssm::diff {

// Checkpoints are a file pair: <path>.bin holds the concatenated raw
// little-endian float64 payload (values plus, when present, Adam moments),
// <path>.json is the manifest with names, shapes and offsets.
class CheckpointError : public std::runtime_error {
    using std::runtime_error::runtime_error;
};

void save_params(ParamStore& store, const std::string& path_stem,
                 const std::string& extra_json = "");

// Loads into an existing store; every manifest entry must match an existing
// parameter's shape, otherwise a CheckpointError names the offender.
// Returns the manifest's "extra" payload verbatim (empty if absent).
std::string load_params(ParamStore& store, const std::string& path_stem);

}  // namespace mssm::diff
