#pragma once

// Umbrella header.

#include "secvit/attention.hpp"
#include "secvit/bench.hpp"
#include "secvit/cluster.hpp"
#include "secvit/data.hpp"
#include "secvit/flops.hpp"
#include "secvit/gradcheck.hpp"
#include "secvit/io.hpp"
#include "secvit/kernels.hpp"
#include "secvit/model.hpp"
#include "secvit/optim.hpp"
#include "secvit/partition.hpp"
#include "secvit/random.hpp"
#include "secvit/synth.hpp"
#include "secvit/tape.hpp"
#include "secvit/tensor.hpp"
#include "secvit/train.hpp"
#include "secvit/viz.hpp"
