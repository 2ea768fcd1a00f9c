#pragma once

#include "clregime/config.hpp"
#include "clregime/core.hpp"
#include "clregime/csv.hpp"
#include "clregime/data.hpp"
#include "clregime/descent.hpp"
#include "clregime/methods.hpp"
#include "clregime/metrics.hpp"
#include "clregime/nn.hpp"
#include "clregime/regime.hpp"
#include "clregime/rng.hpp"
#include "clregime/runner.hpp"
#include "clregime/trainer.hpp"
