#pragma once

#include "vaeneu/checkpoint.hpp"
#include "vaeneu/config.hpp"
#include "vaeneu/data.hpp"
#include "vaeneu/forecast.hpp"
#include "vaeneu/layers.hpp"
#include "vaeneu/metrics.hpp"
#include "vaeneu/model.hpp"
#include "vaeneu/ops.hpp"
#include "vaeneu/reports.hpp"
#include "vaeneu/rng.hpp"
#include "vaeneu/special.hpp"
#include "vaeneu/stats.hpp"
#include "vaeneu/tensor.hpp"
#include "vaeneu/train.hpp"
