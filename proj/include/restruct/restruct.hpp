#pragma once

#include "restruct/agents.hpp"
#include "restruct/channel.hpp"
#include "restruct/error.hpp"
#include "restruct/lexicon.hpp"
#include "restruct/metrics.hpp"
#include "restruct/protocol.hpp"
#include "restruct/report.hpp"
#include "restruct/session.hpp"
#include "restruct/synthgen.hpp"
#include "restruct/template.hpp"
#include "restruct/util.hpp"
