#pragma once

#include "glsweep/app.hpp"
#include "glsweep/bench.hpp"
#include "glsweep/chol.hpp"
#include "glsweep/datagen.hpp"
#include "glsweep/dataset_io.hpp"
#include "glsweep/eig.hpp"
#include "glsweep/error.hpp"
#include "glsweep/kernels.hpp"
#include "glsweep/matrix.hpp"
#include "glsweep/memory.hpp"
#include "glsweep/model.hpp"
#include "glsweep/naive.hpp"
#include "glsweep/pipeline.hpp"
#include "glsweep/results.hpp"
#include "glsweep/stream_io.hpp"
#include "glsweep/sweep.hpp"
