#pragma once

#include "enotab/condition.hpp"
#include "enotab/config.hpp"
#include "enotab/error.hpp"
#include "enotab/evidence_tree.hpp"
#include "enotab/pipeline.hpp"
#include "enotab/prompts.hpp"
#include "enotab/provider.hpp"
#include "enotab/question_denoiser.hpp"
#include "enotab/retrieval.hpp"
#include "enotab/table.hpp"
#include "enotab/text.hpp"
#include "enotab/toolkit.hpp"
