#pragma once

#include "brains/casemodel.hpp"
#include "brains/checkpoint.hpp"
#include "brains/config.hpp"
#include "brains/diagnose.hpp"
#include "brains/encoder.hpp"
#include "brains/evalharness.hpp"
#include "brains/fusion.hpp"
#include "brains/remote.hpp"
#include "brains/retrieval.hpp"
#include "brains/service.hpp"
