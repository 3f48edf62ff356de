#pragma once

#include <memory>

#include "nowcast/models/convlstm.hpp"
#include "nowcast/models/svglp.hpp"
#include "nowcast/models/unet.hpp"

namespace nowcast::models {

inline std::unique_ptr<Model> make_model(const ModelConfig& cfg) {
  switch (cfg.kind) {
    case ModelKind::unet: return std::make_unique<Unet>(cfg);
    case ModelKind::convlstm: return std::make_unique<ConvLstm>(cfg);
    case ModelKind::svglp: return std::make_unique<SvgLp>(cfg);
  }
  throw UsageError("unknown model kind");
}

}  // namespace nowcast::models
