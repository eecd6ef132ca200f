#pragma once

#include "luslines/app.hpp"
#include "luslines/cauchy.hpp"
#include "luslines/core.hpp"
#include "luslines/error.hpp"
#include "luslines/eval.hpp"
#include "luslines/grid.hpp"
#include "luslines/io.hpp"
#include "luslines/lineid.hpp"
#include "luslines/parallel.hpp"
#include "luslines/radon.hpp"
#include "luslines/solvers.hpp"
#include "luslines/ssim.hpp"
#include "luslines/training.hpp"
