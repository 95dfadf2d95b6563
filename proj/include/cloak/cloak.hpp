#pragma once

// Umbrella header for the whole lab.

#include <cstdarg>

#include "cloak/config.hpp"
#include "cloak/crafter.hpp"
#include "cloak/dataset.hpp"
#include "cloak/diffusion.hpp"
#include "cloak/harness.hpp"
#include "cloak/metrics.hpp"
#include "cloak/png_io.hpp"
#include "cloak/purify.hpp"
#include "cloak/tensor.hpp"
#include "cloak/trainer.hpp"
#include "cloak/transforms.hpp"
