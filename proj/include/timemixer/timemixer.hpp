#pragma once

#include "timemixer/checkpoint.hpp"
#include "timemixer/cli.hpp"
#include "timemixer/data.hpp"
#include "timemixer/decomposition.hpp"
#include "timemixer/experiment.hpp"
#include "timemixer/fft.hpp"
#include "timemixer/metrics.hpp"
#include "timemixer/model.hpp"
#include "timemixer/rng.hpp"
#include "timemixer/tensor.hpp"
#include "timemixer/training.hpp"
