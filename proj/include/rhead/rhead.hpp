#pragma once

#include "rhead/config.hpp"
#include "rhead/conformance.hpp"
#include "rhead/error.hpp"
#include "rhead/experiments.hpp"
#include "rhead/harness.hpp"
#include "rhead/protocol.hpp"
#include "rhead/scoring.hpp"
#include "rhead/subprocess.hpp"
#include "rhead/toy_circuit.hpp"
#include "rhead/toy_runner.hpp"
#include "rhead/types.hpp"
