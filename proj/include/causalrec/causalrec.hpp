#pragma once

#include "causalrec/causal.hpp"
#include "causalrec/common.hpp"
#include "causalrec/data.hpp"
#include "causalrec/embedding.hpp"
#include "causalrec/evaluation.hpp"
#include "causalrec/io.hpp"
#include "causalrec/perturbation.hpp"
#include "causalrec/pipeline.hpp"
#include "causalrec/recommender.hpp"
#include "causalrec/vae.hpp"
