#pragma once

#include "thinsets/error.hpp"
#include "thinsets/measures.hpp"
#include "thinsets/iproj.hpp"
#include "thinsets/parallel.hpp"
#include "thinsets/gibbs.hpp"
#include "thinsets/bridge.hpp"
#include "thinsets/tritree.hpp"
#include "thinsets/io.hpp"
#include "thinsets/runner.hpp"
