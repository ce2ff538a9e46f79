use alloc::vec::Vec;

use crate::{Error, Result, Tensor};

/// Images `[n, h, w, c]` with pixels in `[0, 1]`, plus optional ground
/// truth that only evaluation code reads.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageSet {
    images: Tensor,
    labels: Option<Vec<u8>>,
}

impl ImageSet {
    pub fn new(images: Tensor, labels: Option<Vec<u8>>) -> Result<Self> {
        if images.rank() != 4 {
            return Err(Error::Dimension {
                op: "image_set",
                axis: "rank",
                expected: 4,
                found: images.rank(),
            });
        }
        if let Some(bad) = images.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Config(alloc::format!(
                "pixel value {bad} outside [0, 1]"
            )));
        }
        if let Some(l) = &labels {
            if l.len() != images.shape()[0] {
                return Err(Error::LengthMismatch {
                    left: images.shape()[0],
                    right: l.len(),
                });
            }
        }
        Ok(ImageSet { images, labels })
    }

    pub fn len(&self) -> usize {
        self.images.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn images(&self) -> &Tensor {
        &self.images
    }

    pub fn labels(&self) -> Option<&[u8]> {
        self.labels.as_deref()
    }

    /// `(h, w, c)` of one image.
    pub fn image_shape(&self) -> (usize, usize, usize) {
        let s = self.images.shape();
        (s[1], s[2], s[3])
    }

    pub fn subset(&self, indices: &[usize]) -> ImageSet {
        ImageSet {
            images: self.images.select_rows(indices),
            labels: self
                .labels
                .as_ref()
                .map(|l| indices.iter().map(|&i| l[i]).collect()),
        }
    }

    /// The same images under different (or no) labels.
    pub fn with_labels(&self, labels: Option<Vec<u8>>) -> Result<ImageSet> {
        ImageSet::new(self.images.clone(), labels)
    }
}
