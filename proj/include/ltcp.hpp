// ltcp.hpp - umbrella header.
#pragma once

#include "ltcp/error.hpp"
#include "ltcp/buffers.hpp"
#include "ltcp/timers.hpp"
#include "ltcp/protothread.hpp"
#include "ltcp/wire.hpp"
#include "ltcp/netdev.hpp"
#include "ltcp/checksum.hpp"
#include "ltcp/ipv4.hpp"
#include "ltcp/icmp.hpp"
#include "ltcp/tcp.hpp"
#include "ltcp/socket.hpp"
#include "ltcp/stack.hpp"
#include "ltcp/pcap.hpp"
#include "ltcp/harness.hpp"
