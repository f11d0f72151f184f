// SPDX-License-Identifier: Apache-2.0

pub mod analysis;
pub mod baselines;
pub mod binning;
pub mod error;
pub mod pipeline;
pub mod record;
pub mod report;
pub mod sim;
pub mod sizing;
pub mod sketch;
pub mod types;
