#pragma once

#include "scatter1d/config.hpp"
#include "scatter1d/error.hpp"
#include "scatter1d/grid.hpp"
#include "scatter1d/jost.hpp"
#include "scatter1d/marchenko.hpp"
#include "scatter1d/moments.hpp"
#include "scatter1d/parallel.hpp"
#include "scatter1d/potential.hpp"
#include "scatter1d/recovery.hpp"
