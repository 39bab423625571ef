#pragma once

// Umbrella header for the long-tailed classification toolkit.

#include "ltlab/common.hpp"
#include "ltlab/distribution.hpp"
#include "ltlab/experiment.hpp"
#include "ltlab/json_util.hpp"
#include "ltlab/losses.hpp"
#include "ltlab/manifest_io.hpp"
#include "ltlab/metrics.hpp"
#include "ltlab/model.hpp"
#include "ltlab/optimizer.hpp"
#include "ltlab/samplers.hpp"
#include "ltlab/serialization.hpp"
#include "ltlab/trainer.hpp"
