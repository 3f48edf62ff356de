#pragma once

#include "nowcast/config.hpp"
#include "nowcast/dataset.hpp"
#include "nowcast/error.hpp"
#include "nowcast/grid.hpp"
#include "nowcast/grid_store.hpp"
#include "nowcast/losses.hpp"
#include "nowcast/models/checkpoint.hpp"
#include "nowcast/models/models.hpp"
#include "nowcast/models/objective.hpp"
#include "nowcast/partition.hpp"
#include "nowcast/patchwork.hpp"
#include "nowcast/synthgen.hpp"
#include "nowcast/trainer.hpp"
#include "nowcast/transform.hpp"
#include "nowcast/verify.hpp"
