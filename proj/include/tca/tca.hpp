#pragma once

// Umbrella header for the test-time correlation alignment toolkit.

#include "tca/error.hpp"
#include "tca/io.hpp"
#include "tca/linalg.hpp"
#include "tca/metrics.hpp"
#include "tca/model_head.hpp"
#include "tca/pipeline.hpp"
#include "tca/pseudo_source.hpp"
#include "tca/synthgen.hpp"
#include "tca/transform.hpp"
