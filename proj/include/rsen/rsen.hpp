#pragma once

#include "autograd.hpp"
#include "checkpoint.hpp"
#include "config.hpp"
#include "dataset.hpp"
#include "errors.hpp"
#include "gradcheck.hpp"
#include "gradcheck_suite.hpp"
#include "image_io.hpp"
#include "kernels.hpp"
#include "metrics.hpp"
#include "model.hpp"
#include "parallel.hpp"
#include "tensor.hpp"
#include "trainer.hpp"
