#pragma once

#include <cstdint>
#include <string>

#include "adw/features.hpp"
#include "adw/flow.hpp"
#include "adw/synthdisc.hpp"

namespace adw {

// Binary model container, magic "ADWM". All parameters are stored as 64-bit
// doubles, so save followed by load reproduces the model bit for bit.
enum class ModelKind : std::uint8_t { flow = 0, discriminator = 1 };

const char* model_kind_name(ModelKind kind);

struct FlowCheckpoint {
  CouplingFlow flow;
  Standardizer standardizer;  // empty when the flow was trained on raw fields
};

struct DiscCheckpoint {
  AdaptorDiscriminator model;
};

// Reads only the header. Throws ValidationError on bad magic or an unknown
// kind tag.
ModelKind checkpoint_kind(const std::string& path);

void save_checkpoint(const std::string& path, const CouplingFlow& flow,
                     const Standardizer& standardizer);
void save_checkpoint(const std::string& path, const AdaptorDiscriminator& model);

// Loaders validate the kind tag and throw ValidationError on truncation,
// naming the path.
FlowCheckpoint load_flow_checkpoint(const std::string& path);
DiscCheckpoint load_disc_checkpoint(const std::string& path);

}  // namespace adw
