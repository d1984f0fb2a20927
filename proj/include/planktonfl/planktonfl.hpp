#pragma once

#include "planktonfl/config.hpp"
#include "planktonfl/data.hpp"
#include "planktonfl/error.hpp"
#include "planktonfl/experiments.hpp"
#include "planktonfl/federation.hpp"
#include "planktonfl/image_io.hpp"
#include "planktonfl/layers.hpp"
#include "planktonfl/model_spec.hpp"
#include "planktonfl/network.hpp"
#include "planktonfl/parameters.hpp"
#include "planktonfl/rng.hpp"
#include "planktonfl/tensor.hpp"
#include "planktonfl/wire.hpp"
