#pragma once

// Umbrella header for the sweepmill parameter-study engine.

#include "sweepmill/errors.hpp"
#include "sweepmill/value.hpp"
#include "sweepmill/wdl.hpp"
#include "sweepmill/combinator.hpp"
#include "sweepmill/interp.hpp"
#include "sweepmill/dag.hpp"
#include "sweepmill/process.hpp"
#include "sweepmill/dispatch.hpp"
#include "sweepmill/store.hpp"
#include "sweepmill/executor.hpp"
#include "sweepmill/viz.hpp"
