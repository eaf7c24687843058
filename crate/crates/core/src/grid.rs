//! Row-major 2D raster container used for slices, masks, labels and
//! floating-point planes.

/// Dense `height x width` raster stored row-major.
///
/// Indexing is always `(row, col)`; row 0 is the top image row. All rasters
/// flowing through the pipeline (intensities, masks, labels, probability
/// planes, error maps) share this container so shape checks live in one
/// place.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Grid<T> {
    height: usize,
    width: usize,
    data: Vec<T>,
}

impl<T: Clone> Grid<T> {
    /// Raster of the given shape filled with `fill`.
    pub fn filled(height: usize, width: usize, fill: T) -> Self {
        Self {
            height,
            width,
            data: vec![fill; height * width],
        }
    }
}

impl<T> Grid<T> {
    /// Wraps an existing row-major buffer. Panics if the length does not
    /// match `height * width`; buffers always originate inside the crate.
    pub fn from_vec(height: usize, width: usize, data: Vec<T>) -> Self {
        assert_eq!(
            data.len(),
            height * width,
            "grid buffer length must equal height * width"
        );
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

    /// `(height, width)` pair, convenient for shape comparisons.
    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> &T {
        &self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: T) {
        self.data[row * self.width + col] = value;
    }

    #[inline]
    pub fn get_mut(&mut self, row: usize, col: usize) -> &mut T {
        &mut self.data[row * self.width + col]
    }

    /// Row-major view of the backing buffer.
    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    /// Consumes the grid, returning the row-major buffer.
    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    /// Iterates `(row, col, &value)` in raster order.
    pub fn indexed_iter(&self) -> impl Iterator<Item = (usize, usize, &T)> {
        let width = self.width;
        self.data
            .iter()
            .enumerate()
            .map(move |(i, v)| (i / width, i % width, v))
    }

    /// Applies `f` to every element, preserving shape.
    pub fn map<U, F: FnMut(&T) -> U>(&self, f: F) -> Grid<U> {
        Grid {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(f).collect(),
        }
    }
}

impl<T: Clone> Grid<T> {
    /// Copies the `height x width` window whose top-left corner is
    /// `(row0, col0)`. Panics if the window leaves the raster; callers
    /// validate geometry before cropping.
    pub fn crop(&self, row0: usize, col0: usize, height: usize, width: usize) -> Grid<T> {
        assert!(row0 + height <= self.height && col0 + width <= self.width);
        let mut data = Vec::with_capacity(height * width);
        for r in row0..row0 + height {
            let start = r * self.width + col0;
            data.extend_from_slice(&self.data[start..start + width]);
        }
        Grid {
            height,
            width,
            data,
        }
    }
}

impl Grid<bool> {
    /// Number of `true` pixels.
    pub fn count_true(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }
}
