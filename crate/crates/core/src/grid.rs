//! Row-major H×W grids shared by every map type.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A pixel coordinate `(row, col)`.
pub type Pixel = (usize, usize);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid<T> {
    height: usize,
    width: usize,
    data: Vec<T>,
}

impl<T: Clone> Grid<T> {
    pub fn filled(height: usize, width: usize, value: T) -> Self {
        Self {
            height,
            width,
            data: vec![value; height * width],
        }
    }
}

impl<T> Grid<T> {
    pub fn from_vec(height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Shape(format!(
                "grid data length {} does not match {height}x{width}",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        Self {
            height,
            width,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn contains(&self, (r, c): Pixel) -> bool {
        r < self.height && c < self.width
    }

    #[inline]
    pub fn index(&self, (r, c): Pixel) -> usize {
        r * self.width + c
    }

    #[inline]
    pub fn pixel(&self, idx: usize) -> Pixel {
        (idx / self.width, idx % self.width)
    }

    #[inline]
    pub fn get(&self, p: Pixel) -> &T {
        &self.data[self.index(p)]
    }

    #[inline]
    pub fn set(&mut self, p: Pixel, value: T) {
        let i = self.index(p);
        self.data[i] = value;
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn iter(&self) -> std::slice::Iter<'_, T> {
        self.data.iter()
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Grid<U> {
        Grid {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(f).collect(),
        }
    }

    pub fn same_dims<U>(&self, other: &Grid<U>) -> bool {
        self.dims() == other.dims()
    }
}

impl<T> std::ops::Index<Pixel> for Grid<T> {
    type Output = T;
    fn index(&self, p: Pixel) -> &T {
        self.get(p)
    }
}

impl<T> std::ops::IndexMut<Pixel> for Grid<T> {
    fn index_mut(&mut self, p: Pixel) -> &mut T {
        let i = Grid::index(self, p);
        &mut self.data[i]
    }
}

/// Binary mask over a grid.
pub type BinaryMask = Grid<bool>;

impl Grid<bool> {
    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }
}

/// Power of two check used for grid-size invariants.
pub(crate) fn is_pow2_in(v: usize, lo: usize, hi: usize) -> bool {
    v.is_power_of_two() && (lo..=hi).contains(&v)
}
