//! Dense 2D / 3D grids and the plexus vocabulary used throughout the
//! pipeline.
//!
//! Layout is x-fastest everywhere: `Image` index is `x + nx*y`, `Volume`
//! index is `x + nx*(y + ny*z)`. For OCTA scans x runs along a B-scan,
//! y across B-scans and z along the axial (depth) direction, increasing
//! toward the RPE.

use serde::{Deserialize, Serialize};

/// Dense 2D grid, x-fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct Image<T> {
    nx: usize,
    ny: usize,
    data: Vec<T>,
}

pub type ScalarImage = Image<f32>;
pub type BinaryImage = Image<bool>;

impl<T: Clone> Image<T> {
    pub fn filled(nx: usize, ny: usize, value: T) -> Self {
        Image {
            nx,
            ny,
            data: vec![value; nx * ny],
        }
    }

    /// Wraps an existing buffer; `data.len()` must equal `nx * ny`.
    pub fn from_vec(nx: usize, ny: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), nx * ny, "image buffer length mismatch");
        Image { nx, ny, data }
    }

    pub fn from_fn(nx: usize, ny: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(nx * ny);
        for y in 0..ny {
            for x in 0..nx {
                data.push(f(x, y));
            }
        }
        Image { nx, ny, data }
    }
}

impl<T> Image<T> {
    #[inline]
    pub fn nx(&self) -> usize {
        self.nx
    }

    #[inline]
    pub fn ny(&self) -> usize {
        self.ny
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn idx(&self, x: usize, y: usize) -> usize {
        debug_assert!(x < self.nx && y < self.ny);
        x + self.nx * y
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> &T {
        &self.data[self.idx(x, y)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: T) {
        let i = self.idx(x, y);
        self.data[i] = value;
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn same_shape<U>(&self, other: &Image<U>) -> bool {
        self.nx == other.nx && self.ny == other.ny
    }
}

impl<T: Copy> Image<T> {
    #[inline]
    pub fn at(&self, x: usize, y: usize) -> T {
        self.data[self.idx(x, y)]
    }
}

impl BinaryImage {
    pub fn count_true(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }
}

/// Dense 3D grid, x-fastest, z slowest.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume<T> {
    nx: usize,
    ny: usize,
    nz: usize,
    data: Vec<T>,
}

pub type BinaryVolume = Volume<bool>;

impl<T: Clone> Volume<T> {
    pub fn filled(nx: usize, ny: usize, nz: usize, value: T) -> Self {
        Volume {
            nx,
            ny,
            nz,
            data: vec![value; nx * ny * nz],
        }
    }

    /// Wraps an existing buffer; `data.len()` must equal `nx * ny * nz`.
    pub fn from_vec(nx: usize, ny: usize, nz: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), nx * ny * nz, "volume buffer length mismatch");
        Volume { nx, ny, nz, data }
    }

    /// Fills from `f(x, y, z)` in storage order (x fastest).
    pub fn from_fn(nx: usize, ny: usize, nz: usize, mut f: impl FnMut(usize, usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(nx * ny * nz);
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    data.push(f(x, y, z));
                }
            }
        }
        Volume { nx, ny, nz, data }
    }
}

impl<T> Volume<T> {
    #[inline]
    pub fn nx(&self) -> usize {
        self.nx
    }

    #[inline]
    pub fn ny(&self) -> usize {
        self.ny
    }

    #[inline]
    pub fn nz(&self) -> usize {
        self.nz
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.nx, self.ny, self.nz)
    }

    #[inline]
    pub fn idx(&self, x: usize, y: usize, z: usize) -> usize {
        debug_assert!(x < self.nx && y < self.ny && z < self.nz);
        x + self.nx * (y + self.ny * z)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> &T {
        &self.data[self.idx(x, y, z)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, z: usize, value: T) {
        let i = self.idx(x, y, z);
        self.data[i] = value;
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn same_dims<U>(&self, other: &Volume<U>) -> bool {
        self.dims() == other.dims()
    }
}

impl<T: Copy> Volume<T> {
    #[inline]
    pub fn at(&self, x: usize, y: usize, z: usize) -> T {
        self.data[self.idx(x, y, z)]
    }
}

impl BinaryVolume {
    pub fn count_true(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }
}

/// The three retinal capillary plexuses measured by the pipeline.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Plexus {
    Superficial,
    Intermediate,
    Deep,
}

impl Plexus {
    pub const ALL: [Plexus; 3] = [Plexus::Superficial, Plexus::Intermediate, Plexus::Deep];

    pub fn index(self) -> usize {
        match self {
            Plexus::Superficial => 0,
            Plexus::Intermediate => 1,
            Plexus::Deep => 2,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Plexus::Superficial => "superficial",
            Plexus::Intermediate => "intermediate",
            Plexus::Deep => "deep",
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn image_layout_is_x_fastest() {
        let img = Image::from_fn(3, 2, |x, y| (x + 10 * y) as i32);
        assert_eq!(img.data(), &[0, 1, 2, 10, 11, 12]);
        assert_eq!(img.at(2, 1), 12);
    }

    #[test]
    fn volume_layout_is_x_fastest_z_slowest() {
        let mut vol = Volume::filled(2, 2, 2, 0i32);
        vol.set(1, 0, 1, 7);
        assert_eq!(vol.idx(1, 0, 1), 1 + 2 * (0 + 2 * 1));
        assert_eq!(vol.data()[5], 7);
    }

    #[test]
    fn plexus_indices_cover_all() {
        for (i, p) in Plexus::ALL.iter().enumerate() {
            assert_eq!(p.index(), i);
        }
    }
}
