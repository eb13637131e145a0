// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "lattice.hpp"
#include "philox.hpp"
#include "flip_process.hpp"
#include "evolution.hpp"
#include "stats.hpp"
#include "ensemble.hpp"
#include "krylov.hpp"
#include "character_basis.hpp"
#include "augmented.hpp"
#include "spectral.hpp"
#include "config.hpp"
#include "report.hpp"
#include "cli.hpp"
