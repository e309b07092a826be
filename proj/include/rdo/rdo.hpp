#pragma once

// Umbrella header.

#include "rdo/active_learning.hpp"
#include "rdo/bnn.hpp"
#include "rdo/bnn_io.hpp"
#include "rdo/commands.hpp"
#include "rdo/config.hpp"
#include "rdo/de.hpp"
#include "rdo/error.hpp"
#include "rdo/experiment.hpp"
#include "rdo/gp.hpp"
#include "rdo/mcs.hpp"
#include "rdo/moments.hpp"
#include "rdo/mpss.hpp"
#include "rdo/normal.hpp"
#include "rdo/pdd.hpp"
#include "rdo/problem.hpp"
#include "rdo/random.hpp"
#include "rdo/report.hpp"
#include "rdo/sampling.hpp"
#include "rdo/surrogate.hpp"
