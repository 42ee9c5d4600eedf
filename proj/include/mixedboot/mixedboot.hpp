#pragma once

#include "mixedboot/errors.hpp"
#include "mixedboot/dataset.hpp"
#include "mixedboot/likelihood.hpp"
#include "mixedboot/fit.hpp"
#include "mixedboot/random.hpp"
#include "mixedboot/reflate.hpp"
#include "mixedboot/parallel.hpp"
#include "mixedboot/engines.hpp"
#include "mixedboot/inference.hpp"
#include "mixedboot/simlab.hpp"
#include "mixedboot/io.hpp"
#include "mixedboot/cli.hpp"
