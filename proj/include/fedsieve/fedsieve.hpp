#pragma once

#include "fedsieve/attack.hpp"
#include "fedsieve/common.hpp"
#include "fedsieve/config.hpp"
#include "fedsieve/data.hpp"
#include "fedsieve/defense.hpp"
#include "fedsieve/model.hpp"
#include "fedsieve/oracles.hpp"
#include "fedsieve/outlier.hpp"
#include "fedsieve/paillier.hpp"
#include "fedsieve/private_fld.hpp"
#include "fedsieve/sim.hpp"
