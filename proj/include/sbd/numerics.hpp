#pragma once

#include "sbd/numerics/layers.hpp"
#include "sbd/numerics/loss.hpp"
#include "sbd/numerics/lstm.hpp"
#include "sbd/numerics/matrix.hpp"
#include "sbd/numerics/rmsprop.hpp"
#include "sbd/numerics/rng.hpp"
