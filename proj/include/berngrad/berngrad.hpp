#pragma once

// Everything except the command-line layer (experiments.hpp, cli_args.hpp),
// which pulls in the vendored JSON and CLI11 headers.

#include "berngrad/core.hpp"
#include "berngrad/estimators.hpp"
#include "berngrad/least_squares.hpp"
#include "berngrad/objectives.hpp"
#include "berngrad/optim.hpp"
#include "berngrad/parallel.hpp"
#include "berngrad/rng.hpp"
#include "berngrad/variance.hpp"
