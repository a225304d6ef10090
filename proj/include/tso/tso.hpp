#pragma once

// Umbrella header.

#include "tso/analytics.hpp"
#include "tso/config.hpp"
#include "tso/error.hpp"
#include "tso/gradcheck.hpp"
#include "tso/harness.hpp"
#include "tso/judge.hpp"
#include "tso/losses.hpp"
#include "tso/matrix.hpp"
#include "tso/policy_io.hpp"
#include "tso/preference.hpp"
#include "tso/random.hpp"
#include "tso/seq.hpp"
#include "tso/trainer.hpp"
#include "tso/world.hpp"
