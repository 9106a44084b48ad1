use crate::error::{Error, Result};

/// Dense 3D grid stored `[Z, Y, X]` row-major (x fastest).
///
/// NIfTI's `(dim[1], dim[2], dim[3])` maps to `(X, Y, Z)`, so the payload
/// order of a file and of a grid coincide.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid<T> {
    dims: [usize; 3],
    data: Vec<T>,
}

impl<T: Copy> Grid<T> {
    pub fn new(dims: [usize; 3], data: Vec<T>) -> Result<Self> {
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::dim("grid", format!("zero extent in {dims:?}")));
        }
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(Error::dim("grid", format!("{dims:?} needs {n} values, got {}", data.len())));
        }
        Ok(Self { dims, data })
    }

    pub fn filled(dims: [usize; 3], v: T) -> Self {
        Self { dims, data: vec![v; dims.iter().product()] }
    }

    pub fn from_fn(dims: [usize; 3], mut f: impl FnMut([usize; 3]) -> T) -> Self {
        let mut data = Vec::with_capacity(dims.iter().product());
        for z in 0..dims[0] {
            for y in 0..dims[1] {
                for x in 0..dims[2] {
                    data.push(f([z, y, x]));
                }
            }
        }
        Self { dims, data }
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, [z, y, x]: [usize; 3]) -> usize {
        (z * self.dims[1] + y) * self.dims[2] + x
    }

    #[inline]
    pub fn get(&self, p: [usize; 3]) -> T {
        self.data[self.index(p)]
    }

    pub fn map<U: Copy>(&self, f: impl Fn(T) -> U) -> Grid<U> {
        Grid { dims: self.dims, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    /// Copies the window `[start, start + size)`.
    pub fn crop(&self, start: [usize; 3], size: [usize; 3]) -> Result<Grid<T>> {
        if (0..3).any(|a| size[a] == 0 || start[a] + size[a] > self.dims[a]) {
            return Err(Error::dim("crop", format!("window {start:?}+{size:?} exceeds {:?}", self.dims)));
        }
        let mut data = Vec::with_capacity(size.iter().product());
        for z in start[0]..start[0] + size[0] {
            for y in start[1]..start[1] + size[1] {
                let row = self.index([z, y, start[2]]);
                data.extend_from_slice(&self.data[row..row + size[2]]);
            }
        }
        Ok(Grid { dims: size, data })
    }
}

/// Co-registered modality stack with optional labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume {
    pub modalities: Vec<Grid<f32>>,
    pub label: Option<Grid<u8>>,
    /// Voxel size in mm along (x, y, z).
    pub spacing: [f32; 3],
    pub modality_names: Vec<String>,
}

impl Volume {
    pub fn dims(&self) -> [usize; 3] {
        self.modalities.first().map_or([0; 3], Grid::dims)
    }

    /// Checks that every grid shares one shape and labels fit `num_classes`.
    pub fn validate(&self, num_classes: usize) -> Result<()> {
        let dims = self.dims();
        if self.modalities.is_empty() {
            return Err(Error::dim("volume", "no modalities"));
        }
        if self.modality_names.len() != self.modalities.len() {
            return Err(Error::dim(
                "volume",
                format!("{} names for {} modalities", self.modality_names.len(), self.modalities.len()),
            ));
        }
        if let Some(m) = self.modalities.iter().find(|m| m.dims() != dims) {
            return Err(Error::dim("volume", format!("modality dims {:?} differ from {dims:?}", m.dims())));
        }
        if let Some(l) = &self.label {
            if l.dims() != dims {
                return Err(Error::dim("volume", format!("label dims {:?} differ from {dims:?}", l.dims())));
            }
            if let Some(i) = l.data().iter().position(|&c| c as usize >= num_classes) {
                return Err(Error::LabelOutOfRange {
                    label: l.data()[i] as u32,
                    voxel: crate::tensor::unravel_voxel(i, &dims),
                    classes: num_classes,
                });
            }
        }
        Ok(())
    }
}
