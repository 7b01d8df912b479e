//! Named model variants.
//!
//! | name           | display          | encoder | pre-trained | stages | adversarial |
//! |----------------|------------------|---------|-------------|--------|-------------|
//! | `unet`         | UNet             | basic32 | no          | 1      | no          |
//! | `unet11`       | UNet1-1          | basic32 | no          | 2      | no          |
//! | `v16unet`      | v16UNet          | vgg16   | no          | 1      | no          |
//! | `v16punet`     | v16pUNet         | vgg16   | yes         | 1      | no          |
//! | `v19unet`      | v19UNet          | vgg19   | no          | 1      | no          |
//! | `v19punet`     | v19pUNet         | vgg19   | yes         | 1      | no          |
//! | `v16punet11`   | v16pUNet1-1      | vgg16   | yes         | 2      | no          |
//! | `v19punet11`   | v19pUNet1-1      | vgg19   | yes         | 2      | no          |
//! | `cgv16punet11` | cGv16pUNet1-1    | vgg16   | yes         | 2      | yes         |
//! | `cgv19punet11` | cGv19pUNet1-1    | vgg19   | yes         | 2      | yes         |

use std::fmt;
use std::str::FromStr;

use crate::cascade::{CascadeSpec, SegmenterSpec};
use crate::error::{Error, Result};
use crate::generator::{EncoderKind, NetworkSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Variant {
    pub name: &'static str,
    pub display: &'static str,
    pub encoder: EncoderKind,
    pub pretrained: bool,
    pub cascaded: bool,
    pub adversarial: bool,
}

const fn v(
    name: &'static str,
    display: &'static str,
    encoder: EncoderKind,
    pretrained: bool,
    cascaded: bool,
    adversarial: bool,
) -> Variant {
    Variant {
        name,
        display,
        encoder,
        pretrained,
        cascaded,
        adversarial,
    }
}

pub const VARIANTS: [Variant; 10] = [
    v("unet", "UNet", EncoderKind::Basic32, false, false, false),
    v("unet11", "UNet1-1", EncoderKind::Basic32, false, true, false),
    v("v16unet", "v16UNet", EncoderKind::Vgg16, false, false, false),
    v("v16punet", "v16pUNet", EncoderKind::Vgg16, true, false, false),
    v("v19unet", "v19UNet", EncoderKind::Vgg19, false, false, false),
    v("v19punet", "v19pUNet", EncoderKind::Vgg19, true, false, false),
    v("v16punet11", "v16pUNet1-1", EncoderKind::Vgg16, true, true, false),
    v("v19punet11", "v19pUNet1-1", EncoderKind::Vgg19, true, true, false),
    v("cgv16punet11", "cGv16pUNet1-1", EncoderKind::Vgg16, true, true, true),
    v("cgv19punet11", "cGv19pUNet1-1", EncoderKind::Vgg19, true, true, true),
];

impl Variant {
    /// Accepts the lowercase name or the display name.
    pub fn lookup(name: &str) -> Result<Variant> {
        VARIANTS
            .iter()
            .find(|v| v.name == name || v.display == name)
            .copied()
            .ok_or_else(|| {
                let known: Vec<&str> = VARIANTS.iter().map(|v| v.name).collect();
                Error::Config(format!("unknown variant {name:?}; expected one of {}", known.join(", ")))
            })
    }

    /// Full-width architecture.
    pub fn spec(&self) -> SegmenterSpec {
        self.spec_with_width(1.0)
    }

    /// Architecture at a reduced width; pre-trained variants only validate
    /// at width 1.
    pub fn spec_with_width(&self, width_multiplier: f64) -> SegmenterSpec {
        let base = NetworkSpec::new(self.encoder)
            .pretrained(self.pretrained)
            .width(width_multiplier);
        if self.cascaded {
            SegmenterSpec::Cascade {
                cascade: CascadeSpec::from_base(base),
            }
        } else {
            SegmenterSpec::Single { generator: base }
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.spec().parameter_count()
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.display)
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::lookup(s)
    }
}

/// Full-width parameter count of a known variant, by either name.
pub fn parameter_count(name: &str) -> Option<usize> {
    Variant::lookup(name).ok().map(|v| v.parameter_count())
}
