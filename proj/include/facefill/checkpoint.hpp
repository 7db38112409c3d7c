#pragma once

#include <map>
#include <string>

#include "facefill/nn.hpp"

namespace facefill {

// Named-array archive used for every persistent artifact (model weights,
// queue state, optimizer moments, counters, config snapshots). Entries are
// written sorted by name with fixed-width little-endian fields, so
// save -> load -> save is byte-identical.
struct Archive {
    std::map<std::string, Tensor> tensors;
    std::map<std::string, std::string> texts;

    void save(const std::string& path) const;
    static Archive load(const std::string& path);

    bool has(const std::string& name) const { return tensors.count(name) > 0; }
    const Tensor& get(const std::string& name) const;

    void put_scalar(const std::string& name, real v);
    real get_scalar(const std::string& name) const;

    void put_params(const std::string& prefix, const ParamStore& params);
    // Shape-checked; throws CheckpointError on missing names or mismatches.
    void load_params(const std::string& prefix, ParamStore& params) const;
};

}  // namespace facefill
