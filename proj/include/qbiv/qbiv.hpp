#pragma once

#include "qbiv/baseline.hpp"
#include "qbiv/binary_io.hpp"
#include "qbiv/commands.hpp"
#include "qbiv/config.hpp"
#include "qbiv/core.hpp"
#include "qbiv/dataset.hpp"
#include "qbiv/embedding.hpp"
#include "qbiv/eval.hpp"
#include "qbiv/filter.hpp"
#include "qbiv/hashing.hpp"
#include "qbiv/index.hpp"
#include "qbiv/kmeans.hpp"
#include "qbiv/synthetic.hpp"
