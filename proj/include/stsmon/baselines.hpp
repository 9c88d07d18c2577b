#pragma once

#include "stsmon/image.hpp"
#include "stsmon/sms.hpp"

namespace stsmon {

// Kernel-weighted moving average of pixel intensities. Margin (w+1)/2.
SmsImage epwma_sms(const GreyImage& img, const SmsConfig& cfg);

// Kernel-weighted moving variance about the unweighted window mean.
// Margin (w+1)/2.
SmsImage epwmv_sms(const GreyImage& img, const SmsConfig& cfg);

}  // namespace stsmon
