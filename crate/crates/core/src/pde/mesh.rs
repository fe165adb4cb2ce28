use crate::error::{Error, Result};

/// Uniform P1 triangulation of `[0, 2] × [0, 1]` whose grid lines include the
/// interface `x = 1`. Every square cell is split along its rising diagonal.
#[derive(Debug, Clone)]
pub struct InterfaceMesh {
    pub h: f64,
    pub nx: usize,
    pub ny: usize,
    pub nodes: Vec<[f64; 2]>,
    pub elements: Vec<[usize; 3]>,
    pub dirichlet_mask: Vec<bool>,
    /// Node index → interior degree of freedom (`None` on the boundary).
    pub dof_of_node: Vec<Option<usize>>,
    /// Interior degree of freedom → node index.
    pub node_of_dof: Vec<usize>,
}

impl InterfaceMesh {
    pub fn new(h: f64) -> Result<Self> {
        if !(h > 0.0 && h <= 1.0) {
            return Err(Error::MisalignedMesh { h });
        }
        let per_unit = (1.0 / h).round();
        if (per_unit * h - 1.0).abs() > 1e-10 || per_unit < 1.0 {
            return Err(Error::MisalignedMesh { h });
        }
        let ny = per_unit as usize;
        let nx = 2 * ny;
        let h = 1.0 / ny as f64;

        let idx = |i: usize, j: usize| j * (nx + 1) + i;
        let mut nodes = Vec::with_capacity((nx + 1) * (ny + 1));
        let mut dirichlet_mask = Vec::with_capacity(nodes.capacity());
        for j in 0..=ny {
            for i in 0..=nx {
                nodes.push([i as f64 * h, j as f64 * h]);
                dirichlet_mask.push(i == 0 || j == 0 || i == nx || j == ny);
            }
        }
        let mut elements = Vec::with_capacity(2 * nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                let (a, b, c, d) = (idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1));
                elements.push([a, b, c]);
                elements.push([a, c, d]);
            }
        }
        let mut dof_of_node = vec![None; nodes.len()];
        let mut node_of_dof = Vec::new();
        for (n, &bnd) in dirichlet_mask.iter().enumerate() {
            if !bnd {
                dof_of_node[n] = Some(node_of_dof.len());
                node_of_dof.push(n);
            }
        }
        Ok(Self {
            h,
            nx,
            ny,
            nodes,
            elements,
            dirichlet_mask,
            dof_of_node,
            node_of_dof,
        })
    }

    pub fn n_dofs(&self) -> usize {
        self.node_of_dof.len()
    }

    /// Signed area of element `e` (positive for counter-clockwise vertices).
    pub fn signed_area(&self, e: usize) -> f64 {
        let [a, b, c] = self.elements[e].map(|n| self.nodes[n]);
        0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
    }

    pub fn centroid(&self, e: usize) -> [f64; 2] {
        let [a, b, c] = self.elements[e].map(|n| self.nodes[n]);
        [(a[0] + b[0] + c[0]) / 3.0, (a[1] + b[1] + c[1]) / 3.0]
    }

    /// True when element `e` lies in the left subdomain `x < 1`.
    pub fn in_left_subdomain(&self, e: usize) -> bool {
        self.centroid(e)[0] < 1.0
    }

    /// Evaluates `f` at interior degrees of freedom.
    pub fn interpolate(&self, f: impl Fn(f64, f64) -> f64) -> nalgebra::DVector<f64> {
        nalgebra::DVector::from_iterator(
            self.n_dofs(),
            self.node_of_dof.iter().map(|&n| f(self.nodes[n][0], self.nodes[n][1])),
        )
    }
}
