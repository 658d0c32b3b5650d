#pragma once

#include "lamelab/error.hpp"
#include "lamelab/grid.hpp"
#include "lamelab/fft.hpp"
#include "lamelab/field_ops.hpp"
#include "lamelab/spectral_ops.hpp"
#include "lamelab/besov.hpp"
#include "lamelab/varcoef.hpp"
#include "lamelab/dense_oracle.hpp"
#include "lamelab/kernel_lab.hpp"
#include "lamelab/maxreg.hpp"
#include "lamelab/interpolation.hpp"
#include "lamelab/lagrangian.hpp"
#include "lamelab/eulerian.hpp"
#include "lamelab/io.hpp"
#include "lamelab/experiment.hpp"
