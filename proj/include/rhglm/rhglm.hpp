#pragma once

#include "rhglm/bayes.hpp"
#include "rhglm/dataset.hpp"
#include "rhglm/errors.hpp"
#include "rhglm/estimation.hpp"
#include "rhglm/io.hpp"
#include "rhglm/likelihood.hpp"
#include "rhglm/optim.hpp"
#include "rhglm/rng.hpp"
#include "rhglm/robust_density.hpp"
#include "rhglm/simstudy.hpp"
#include "rhglm/special_fns.hpp"
