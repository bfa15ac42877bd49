//! Every chapter of the guide is attached to a module here so its code blocks
//! run as doc-tests.

#[doc = include_str!("../../../book/src/introduction.md")]
mod introduction {}

#[doc = include_str!("../../../book/src/point-clouds.md")]
mod point_clouds {}

#[doc = include_str!("../../../book/src/feature-codec.md")]
mod feature_codec {}

#[doc = include_str!("../../../book/src/link.md")]
mod link {}

#[doc = include_str!("../../../book/src/channel-codec-and-fusion.md")]
mod channel_codec_and_fusion {}

#[doc = include_str!("../../../book/src/metrics.md")]
mod metrics {}

#[doc = include_str!("../../../book/src/training.md")]
mod training {}

#[doc = include_str!("../../../book/src/baseline.md")]
mod baseline {}

#[doc = include_str!("../../../book/src/cli.md")]
mod cli {}
