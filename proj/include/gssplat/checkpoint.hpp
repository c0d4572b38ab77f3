#pragma once

#include <string>

#include "gssplat/network.hpp"
#include "gssplat/tensor.hpp"

namespace gssplat {

// Weight checkpoint: magic "GSNN", u32 version, u32 tensor count, then per
// tensor (u32 name length, name, u32 ndim, u32 dims..., f32 data).
void save_checkpoint(const std::string& path, const ParamStore<float>& store);

// Fills an existing store (built from the sidecar config) by name; missing
// or shape-mismatched tensors are data errors.
void load_checkpoint(const std::string& path, ParamStore<float>& store);

// JSON sidecar with the network configuration and reconstruction settings.
struct SidecarConfig {
    HybridNetConfig net;
    double unit_interval_scale = 1.0 / 64.0;  // grid interval = extent * scale
    double log_scale_bias = -4.0;
    bool straight_through_mask = false;
};

void save_sidecar(const std::string& path, const SidecarConfig& cfg);
SidecarConfig load_sidecar(const std::string& path);

}  // namespace gssplat
