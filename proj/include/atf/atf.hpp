#pragma once

#include "atf/analysis.hpp"
#include "atf/corpus.hpp"
#include "atf/error.hpp"
#include "atf/labeler.hpp"
#include "atf/loop.hpp"
#include "atf/metrics.hpp"
#include "atf/mock_lm.hpp"
#include "atf/prompter.hpp"
#include "atf/run_result.hpp"
#include "atf/scorer.hpp"
#include "atf/selector.hpp"
#include "atf/server.hpp"
#include "atf/synthetic.hpp"
#include "atf/vectorizer.hpp"
#include "atf/version.hpp"
