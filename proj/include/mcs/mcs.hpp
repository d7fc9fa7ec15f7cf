#pragma once

// Umbrella header for the measurement-constrained sampling library.

#include "mcs/degrade.hpp"
#include "mcs/diffusion.hpp"
#include "mcs/gmm.hpp"
#include "mcs/guidance.hpp"
#include "mcs/haar.hpp"
#include "mcs/image_grid.hpp"
#include "mcs/linops.hpp"
#include "mcs/rng.hpp"
#include "mcs/toy.hpp"
