#pragma once

#include "zvlab/error.hpp"
#include "zvlab/parallel.hpp"
#include "zvlab/fft.hpp"
#include "zvlab/lattice.hpp"
#include "zvlab/grid.hpp"
#include "zvlab/norms.hpp"
#include "zvlab/pde.hpp"
#include "zvlab/coefficients.hpp"
#include "zvlab/families.hpp"
#include "zvlab/zvonkin.hpp"
#include "zvlab/sde.hpp"
#include "zvlab/gridfn_io.hpp"
#include "zvlab/acceptance.hpp"
#include "zvlab/scenario.hpp"
