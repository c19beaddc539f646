use super::{ModelError, ModelParams, Scalar, matmul};
use crate::ctc::FrameLogits;

/// `n` images, each `3 x height x width`, values in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageBatch<F> {
    pub n: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<F>,
}

impl<F: Scalar> ImageBatch<F> {
    pub fn new(n: usize, height: usize, width: usize, data: Vec<F>) -> Result<Self, ModelError> {
        if height == 0 || width == 0 || !height.is_multiple_of(4) || !width.is_multiple_of(4) {
            return Err(ModelError::BadInputSize { height, width });
        }
        if data.len() != n * 3 * height * width {
            return Err(ModelError::ShapeMismatch(format!(
                "batch buffer holds {} values, expected {n}x3x{height}x{width}",
                data.len()
            )));
        }
        Ok(Self { n, height, width, data })
    }

    /// Stacks equally sized `3 x height x width` images.
    pub fn stack(images: &[&[F]], height: usize, width: usize) -> Result<Self, ModelError> {
        let mut data = Vec::with_capacity(images.len() * 3 * height * width);
        for img in images {
            if img.len() != 3 * height * width {
                return Err(ModelError::ShapeMismatch(format!("image holds {} values", img.len())));
            }
            data.extend_from_slice(img);
        }
        Self::new(images.len(), height, width, data)
    }

    pub fn image(&self, i: usize) -> &[F] {
        let len = 3 * self.height * self.width;
        &self.data[i * len..(i + 1) * len]
    }
}

#[derive(Clone, Debug)]
pub struct TeacherTrace<F> {
    /// `n x frames x hidden` for each direction.
    pub h_fwd: Vec<F>,
    pub h_bwd: Vec<F>,
    /// `n x frames x classes`.
    pub logits: Vec<F>,
}

/// Activations cached by [`forward`] for an exact backward pass.
#[derive(Clone, Debug)]
pub struct ForwardTrace<F> {
    pub n: usize,
    pub height: usize,
    pub width: usize,
    pub frames: usize,
    pub classes: usize,
    input: Vec<F>,
    act1: Vec<F>,
    pool1: Vec<F>,
    act2: Vec<F>,
    pool2: Vec<F>,
    act3: Vec<F>,
    features: Vec<F>,
    /// `n x frames x classes`.
    pub student_logits: Vec<F>,
    pub teacher: Option<TeacherTrace<F>>,
}

impl<F: Scalar> ForwardTrace<F> {
    fn logits_of(&self, buf: &[F], i: usize) -> FrameLogits {
        let len = self.frames * self.classes;
        let values = buf[i * len..(i + 1) * len].iter().map(|v| v.as_f64()).collect();
        FrameLogits::new(self.frames, self.classes, values).expect("forward produces finite logits")
    }

    pub fn student_frame_logits(&self, i: usize) -> FrameLogits {
        self.logits_of(&self.student_logits, i)
    }

    pub fn teacher_frame_logits(&self, i: usize) -> Option<FrameLogits> {
        self.teacher.as_ref().map(|t| self.logits_of(&t.logits, i))
    }

    /// Pooled backbone features, `n x frames x channels`.
    pub fn features(&self) -> &[F] {
        &self.features
    }
}

/// Runs the backbone and student head; the teacher head only in training
/// mode.
pub fn forward<F: Scalar>(
    params: &ModelParams<F>,
    batch: &ImageBatch<F>,
    train_mode: bool,
) -> Result<ForwardTrace<F>, ModelError> {
    forward_branches(params, batch, train_mode)
}

/// Like [`forward`] with explicit control over the teacher branch.
pub fn forward_branches<F: Scalar>(
    params: &ModelParams<F>,
    batch: &ImageBatch<F>,
    with_teacher: bool,
) -> Result<ForwardTrace<F>, ModelError> {
    let batch = ImageBatch::new(batch.n, batch.height, batch.width, batch.data.clone())?;
    let arch = *params.arch();
    let [c1, c2, c3] = arch.channels;
    let (n, h, w) = (batch.n, batch.height, batch.width);
    let (h2, w2, h4, w4) = (h / 2, w / 2, h / 4, w / 4);
    let frames = w4;
    let classes = arch.classes;
    let hid = arch.hidden;

    let mut act1 = vec![F::zero(); n * c1 * h * w];
    let mut pool1 = vec![F::zero(); n * c1 * h2 * w2];
    let mut act2 = vec![F::zero(); n * c2 * h2 * w2];
    let mut pool2 = vec![F::zero(); n * c2 * h4 * w4];
    let mut act3 = vec![F::zero(); n * c3 * h4 * w4];
    let mut features = vec![F::zero(); n * frames * c3];
    let mut student_logits = vec![F::zero(); n * frames * classes];
    let mut cols = Vec::new();

    let w1 = params.tensor("backbone.conv1.weight");
    let b1 = params.tensor("backbone.conv1.bias");
    let w2t = params.tensor("backbone.conv2.weight");
    let b2 = params.tensor("backbone.conv2.bias");
    let w3 = params.tensor("backbone.conv3.weight");
    let b3 = params.tensor("backbone.conv3.bias");
    let ws = params.tensor("student.weight");
    let bs = params.tensor("student.bias");

    for i in 0..n {
        let a1 = &mut act1[i * c1 * h * w..(i + 1) * c1 * h * w];
        conv3x3_relu(batch.image(i), 3, h, w, w1, b1, c1, a1, &mut cols);
        let p1 = &mut pool1[i * c1 * h2 * w2..(i + 1) * c1 * h2 * w2];
        avg_pool2(a1, c1, h, w, p1);
        let a2 = &mut act2[i * c2 * h2 * w2..(i + 1) * c2 * h2 * w2];
        conv3x3_relu(p1, c1, h2, w2, w2t, b2, c2, a2, &mut cols);
        let p2 = &mut pool2[i * c2 * h4 * w4..(i + 1) * c2 * h4 * w4];
        avg_pool2(a2, c2, h2, w2, p2);
        let a3 = &mut act3[i * c3 * h4 * w4..(i + 1) * c3 * h4 * w4];
        conv3x3_relu(p2, c2, h4, w4, w3, b3, c3, a3, &mut cols);

        // Collapse the remaining height by its mean: frame t, channel c.
        let feat = &mut features[i * frames * c3..(i + 1) * frames * c3];
        let inv = F::from_f64(1.0 / h4 as f64);
        for c in 0..c3 {
            for y in 0..h4 {
                let row = &a3[(c * h4 + y) * w4..(c * h4 + y + 1) * w4];
                for (t, &v) in row.iter().enumerate() {
                    feat[t * c3 + c] = feat[t * c3 + c] + v * inv;
                }
            }
        }
        let logits = &mut student_logits[i * frames * classes..(i + 1) * frames * classes];
        linear(feat, frames, c3, ws, bs, classes, logits);
    }

    let teacher = with_teacher.then(|| {
        let mut h_fwd = vec![F::zero(); n * frames * hid];
        let mut h_bwd = vec![F::zero(); n * frames * hid];
        let mut logits = vec![F::zero(); n * frames * classes];
        let mut cat = vec![F::zero(); frames * 2 * hid];
        for i in 0..n {
            let feat = &features[i * frames * c3..(i + 1) * frames * c3];
            let hf = &mut h_fwd[i * frames * hid..(i + 1) * frames * hid];
            rnn_forward(params, "teacher.fwd", feat, frames, c3, hid, false, hf);
            let hb = &mut h_bwd[i * frames * hid..(i + 1) * frames * hid];
            rnn_forward(params, "teacher.bwd", feat, frames, c3, hid, true, hb);
            concat_states(hf, hb, frames, hid, &mut cat);
            let out = &mut logits[i * frames * classes..(i + 1) * frames * classes];
            linear(
                &cat,
                frames,
                2 * hid,
                params.tensor("teacher.head.weight"),
                params.tensor("teacher.head.bias"),
                classes,
                out,
            );
        }
        TeacherTrace { h_fwd, h_bwd, logits }
    });

    Ok(ForwardTrace {
        n,
        height: h,
        width: w,
        frames,
        classes,
        input: batch.data,
        act1,
        pool1,
        act2,
        pool2,
        act3,
        features,
        student_logits,
        teacher,
    })
}

/// Gradients of every parameter given upstream gradients on the student
/// logits and, optionally, the teacher logits (both `n x frames x
/// classes`). Gradients are summed over the batch.
pub fn backward<F: Scalar>(
    params: &ModelParams<F>,
    trace: &ForwardTrace<F>,
    d_student: &[F],
    d_teacher: Option<&[F]>,
) -> Result<ModelParams<F>, ModelError> {
    let arch = *params.arch();
    let [c1, c2, c3] = arch.channels;
    let (n, h, w) = (trace.n, trace.height, trace.width);
    let (h2, w2, h4, w4) = (h / 2, w / 2, h / 4, w / 4);
    let (frames, classes, hid) = (trace.frames, trace.classes, arch.hidden);
    let logit_len = n * frames * classes;
    if classes != arch.classes {
        return Err(ModelError::ShapeMismatch("trace and parameters disagree on classes".into()));
    }
    if d_student.len() != logit_len {
        return Err(ModelError::ShapeMismatch(format!(
            "student gradient holds {} values, expected {logit_len}",
            d_student.len()
        )));
    }
    if let Some(dt) = d_teacher {
        if trace.teacher.is_none() {
            return Err(ModelError::ShapeMismatch("teacher gradient given but teacher was not run".into()));
        }
        if dt.len() != logit_len {
            return Err(ModelError::ShapeMismatch(format!(
                "teacher gradient holds {} values, expected {logit_len}",
                dt.len()
            )));
        }
    }

    let mut grads = ModelParams::<F>::zeros(arch);
    let layout = params.layout().clone();
    let range = |name: &str| layout.get(name).expect("known tensor").range();

    let mut d_feat = vec![F::zero(); frames * c3];
    let mut d_act3 = vec![F::zero(); c3 * h4 * w4];
    let mut d_pool2 = vec![F::zero(); c2 * h4 * w4];
    let mut d_act2 = vec![F::zero(); c2 * h2 * w2];
    let mut d_pool1 = vec![F::zero(); c1 * h2 * w2];
    let mut d_act1 = vec![F::zero(); c1 * h * w];
    let mut cols = Vec::new();
    let mut d_cols = Vec::new();
    let mut cat = vec![F::zero(); frames * 2 * hid];
    let mut d_cat = vec![F::zero(); frames * 2 * hid];

    for i in 0..n {
        let feat = &trace.features[i * frames * c3..(i + 1) * frames * c3];
        let ds = &d_student[i * frames * classes..(i + 1) * frames * classes];

        // Student head.
        {
            let g = grads.values_mut();
            linear_backward_params(ds, feat, frames, c3, classes, &mut g[range("student.weight")]);
            column_sums(ds, frames, classes, &mut g[range("student.bias")]);
        }
        matmul(ds, false, params.tensor("student.weight"), false, &mut d_feat, frames, classes, c3, false);

        // Teacher head and recurrences, feeding back into the features.
        if let (Some(tt), Some(dt_all)) = (&trace.teacher, d_teacher) {
            let dt = &dt_all[i * frames * classes..(i + 1) * frames * classes];
            let hf = &tt.h_fwd[i * frames * hid..(i + 1) * frames * hid];
            let hb = &tt.h_bwd[i * frames * hid..(i + 1) * frames * hid];
            concat_states(hf, hb, frames, hid, &mut cat);
            {
                let g = grads.values_mut();
                linear_backward_params(dt, &cat, frames, 2 * hid, classes, &mut g[range("teacher.head.weight")]);
                column_sums(dt, frames, classes, &mut g[range("teacher.head.bias")]);
            }
            matmul(dt, false, params.tensor("teacher.head.weight"), false, &mut d_cat, frames, classes, 2 * hid, false);
            rnn_backward(params, &mut grads, "teacher.fwd", feat, hf, &d_cat, 0, frames, c3, hid, false, &mut d_feat);
            rnn_backward(params, &mut grads, "teacher.bwd", feat, hb, &d_cat, hid, frames, c3, hid, true, &mut d_feat);
        }

        // Height mean, then ReLU of block 3.
        let a3 = &trace.act3[i * c3 * h4 * w4..(i + 1) * c3 * h4 * w4];
        let inv = F::from_f64(1.0 / h4 as f64);
        for c in 0..c3 {
            for y in 0..h4 {
                for t in 0..w4 {
                    let idx = (c * h4 + y) * w4 + t;
                    d_act3[idx] = if a3[idx] > F::zero() { d_feat[t * c3 + c] * inv } else { F::zero() };
                }
            }
        }
        let p2 = &trace.pool2[i * c2 * h4 * w4..(i + 1) * c2 * h4 * w4];
        conv3x3_backward(
            p2, c2, h4, w4, params.tensor("backbone.conv3.weight"), c3, &d_act3,
            &mut grads, &range("backbone.conv3.weight"), &range("backbone.conv3.bias"),
            Some(&mut d_pool2), &mut cols, &mut d_cols,
        );

        let a2 = &trace.act2[i * c2 * h2 * w2..(i + 1) * c2 * h2 * w2];
        avg_pool2_backward(&d_pool2, c2, h2, w2, &mut d_act2);
        relu_mask(&mut d_act2, a2);
        let p1 = &trace.pool1[i * c1 * h2 * w2..(i + 1) * c1 * h2 * w2];
        conv3x3_backward(
            p1, c1, h2, w2, params.tensor("backbone.conv2.weight"), c2, &d_act2,
            &mut grads, &range("backbone.conv2.weight"), &range("backbone.conv2.bias"),
            Some(&mut d_pool1), &mut cols, &mut d_cols,
        );

        let a1 = &trace.act1[i * c1 * h * w..(i + 1) * c1 * h * w];
        avg_pool2_backward(&d_pool1, c1, h, w, &mut d_act1);
        relu_mask(&mut d_act1, a1);
        let input = &trace.input[i * 3 * h * w..(i + 1) * 3 * h * w];
        conv3x3_backward(
            input, 3, h, w, params.tensor("backbone.conv1.weight"), c1, &d_act1,
            &mut grads, &range("backbone.conv1.weight"), &range("backbone.conv1.bias"),
            None, &mut cols, &mut d_cols,
        );
    }
    Ok(grads)
}

/// Same-padded 3x3 patches: row `(ci * 9 + ky * 3 + kx)`, column `y * w + x`.
fn im2col<F: Scalar>(input: &[F], cin: usize, h: usize, w: usize, cols: &mut Vec<F>) {
    cols.clear();
    cols.resize(cin * 9 * h * w, F::zero());
    for ci in 0..cin {
        let plane = &input[ci * h * w..(ci + 1) * h * w];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut cols[((ci * 9) + ky * 3 + kx) * h * w..][..h * w];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                    let dst = &mut row[y * w..(y + 1) * w];
                    match kx {
                        0 => dst[1..].copy_from_slice(&src[..w - 1]),
                        1 => dst.copy_from_slice(src),
                        _ => dst[..w - 1].copy_from_slice(&src[1..]),
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters patch gradients back onto the image.
fn col2im<F: Scalar>(cols: &[F], cin: usize, h: usize, w: usize, out: &mut [F]) {
    out.iter_mut().for_each(|v| *v = F::zero());
    for ci in 0..cin {
        let plane = &mut out[ci * h * w..(ci + 1) * h * w];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &cols[((ci * 9) + ky * 3 + kx) * h * w..][..h * w];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[sy as usize * w..(sy as usize + 1) * w];
                    let src = &row[y * w..(y + 1) * w];
                    let (d, s) = match kx {
                        0 => (&mut dst[..w - 1], &src[1..]),
                        1 => (dst, src),
                        _ => (&mut dst[1..], &src[..w - 1]),
                    };
                    for (a, &b) in d.iter_mut().zip(s) {
                        *a = *a + b;
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn conv3x3_relu<F: Scalar>(
    input: &[F], cin: usize, h: usize, w: usize,
    weight: &[F], bias: &[F], cout: usize,
    out: &mut [F], cols: &mut Vec<F>,
) {
    im2col(input, cin, h, w, cols);
    matmul(weight, false, cols, false, out, cout, cin * 9, h * w, false);
    for (co, plane) in out.chunks_mut(h * w).enumerate() {
        let b = bias[co];
        for v in plane {
            let x = *v + b;
            *v = if x > F::zero() { x } else { F::zero() };
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn conv3x3_backward<F: Scalar>(
    input: &[F], cin: usize, h: usize, w: usize,
    weight: &[F], cout: usize, d_out: &[F],
    grads: &mut ModelParams<F>,
    w_range: &std::ops::Range<usize>, b_range: &std::ops::Range<usize>,
    d_input: Option<&mut [F]>,
    cols: &mut Vec<F>, d_cols: &mut Vec<F>,
) {
    let hw = h * w;
    im2col(input, cin, h, w, cols);
    let g = grads.values_mut();
    matmul(d_out, false, cols, true, &mut g[w_range.clone()], cout, hw, cin * 9, true);
    let gb = &mut g[b_range.clone()];
    for (co, plane) in d_out.chunks(hw).enumerate() {
        gb[co] = plane.iter().fold(gb[co], |acc, &v| acc + v);
    }
    if let Some(d_in) = d_input {
        d_cols.clear();
        d_cols.resize(cin * 9 * hw, F::zero());
        matmul(weight, true, d_out, false, d_cols, cin * 9, cout, hw, false);
        col2im(d_cols, cin, h, w, d_in);
    }
}

fn relu_mask<F: Scalar>(grad: &mut [F], activation: &[F]) {
    for (g, &a) in grad.iter_mut().zip(activation) {
        if a <= F::zero() {
            *g = F::zero();
        }
    }
}

/// 2x2 average pooling with stride 2.
fn avg_pool2<F: Scalar>(input: &[F], c: usize, h: usize, w: usize, out: &mut [F]) {
    let (ho, wo) = (h / 2, w / 2);
    let quarter = F::from_f64(0.25);
    for ch in 0..c {
        for y in 0..ho {
            let r0 = &input[(ch * h + 2 * y) * w..][..w];
            let r1 = &input[(ch * h + 2 * y + 1) * w..][..w];
            let dst = &mut out[(ch * ho + y) * wo..][..wo];
            for (x, d) in dst.iter_mut().enumerate() {
                *d = (r0[2 * x] + r0[2 * x + 1] + r1[2 * x] + r1[2 * x + 1]) * quarter;
            }
        }
    }
}

fn avg_pool2_backward<F: Scalar>(d_out: &[F], c: usize, h: usize, w: usize, d_in: &mut [F]) {
    let (ho, wo) = (h / 2, w / 2);
    let quarter = F::from_f64(0.25);
    for ch in 0..c {
        for y in 0..h {
            let src = &d_out[(ch * ho + y / 2) * wo..][..wo];
            let dst = &mut d_in[(ch * h + y) * w..][..w];
            for (x, d) in dst.iter_mut().enumerate() {
                *d = src[x / 2] * quarter;
            }
        }
    }
}

/// `out (rows x outs) = input (rows x ins) * weight^T + bias`.
fn linear<F: Scalar>(input: &[F], rows: usize, ins: usize, weight: &[F], bias: &[F], outs: usize, out: &mut [F]) {
    matmul(input, false, weight, true, out, rows, ins, outs, false);
    for row in out.chunks_mut(outs) {
        for (v, &b) in row.iter_mut().zip(bias) {
            *v = *v + b;
        }
    }
}

/// Accumulates `d_out^T * input` into a `outs x ins` weight gradient.
fn linear_backward_params<F: Scalar>(d_out: &[F], input: &[F], rows: usize, ins: usize, outs: usize, g: &mut [F]) {
    matmul(d_out, true, input, false, g, outs, rows, ins, true);
}

fn column_sums<F: Scalar>(m: &[F], rows: usize, cols: usize, acc: &mut [F]) {
    for row in m.chunks(cols).take(rows) {
        for (a, &v) in acc.iter_mut().zip(row) {
            *a = *a + v;
        }
    }
}

fn concat_states<F: Scalar>(hf: &[F], hb: &[F], frames: usize, hid: usize, cat: &mut [F]) {
    for t in 0..frames {
        cat[t * 2 * hid..t * 2 * hid + hid].copy_from_slice(&hf[t * hid..(t + 1) * hid]);
        cat[t * 2 * hid + hid..(t + 1) * 2 * hid].copy_from_slice(&hb[t * hid..(t + 1) * hid]);
    }
}

/// `h_t = tanh(W_in x_t + W_rec h_prev + b)`, scanning frames forwards or
/// in reverse.
#[allow(clippy::too_many_arguments)]
fn rnn_forward<F: Scalar>(
    params: &ModelParams<F>, prefix: &str,
    feat: &[F], frames: usize, ins: usize, hid: usize,
    reverse: bool, states: &mut [F],
) {
    let w_in = params.tensor(&format!("{prefix}.input"));
    let w_rec = params.tensor(&format!("{prefix}.recurrent"));
    let bias = params.tensor(&format!("{prefix}.bias"));
    matmul(feat, false, w_in, true, states, frames, ins, hid, false);
    let order: Vec<usize> = if reverse { (0..frames).rev().collect() } else { (0..frames).collect() };
    let mut prev: Option<usize> = None;
    for &t in &order {
        for j in 0..hid {
            let mut a = states[t * hid + j] + bias[j];
            if let Some(p) = prev {
                let wr = &w_rec[j * hid..(j + 1) * hid];
                for (k, &wv) in wr.iter().enumerate() {
                    a = a + wv * states[p * hid + k];
                }
            }
            states[t * hid + j] = a.tanh();
        }
        prev = Some(t);
    }
}

/// Backpropagation through time for one direction. `d_cat` holds the
/// gradient of the concatenated states; this direction reads columns
/// `col0..col0 + hid`.
#[allow(clippy::too_many_arguments)]
fn rnn_backward<F: Scalar>(
    params: &ModelParams<F>, grads: &mut ModelParams<F>, prefix: &str,
    feat: &[F], states: &[F], d_cat: &[F], col0: usize,
    frames: usize, ins: usize, hid: usize, reverse: bool,
    d_feat: &mut [F],
) {
    let w_in = params.tensor(&format!("{prefix}.input"));
    let w_rec = params.tensor(&format!("{prefix}.recurrent"));
    let layout = grads.layout().clone();
    let r_in = layout.get(&format!("{prefix}.input")).expect("tensor").range();
    let r_rec = layout.get(&format!("{prefix}.recurrent")).expect("tensor").range();
    let r_b = layout.get(&format!("{prefix}.bias")).expect("tensor").range();

    // Scan in the reverse of the forward order.
    let order: Vec<usize> = if reverse { (0..frames).collect() } else { (0..frames).rev().collect() };
    let prev_of = |t: usize| -> Option<usize> {
        if reverse {
            (t + 1 < frames).then_some(t + 1)
        } else {
            t.checked_sub(1)
        }
    };
    let mut d_pre = vec![F::zero(); frames * hid];
    let mut carry = vec![F::zero(); hid];
    let g = grads.values_mut();
    for &t in &order {
        for j in 0..hid {
            let ht = states[t * hid + j];
            let dh = d_cat[t * 2 * hid + col0 + j] + carry[j];
            d_pre[t * hid + j] = dh * (F::one() - ht * ht);
        }
        let da = &d_pre[t * hid..(t + 1) * hid];
        for (j, &v) in da.iter().enumerate() {
            g[r_b.start + j] = g[r_b.start + j] + v;
        }
        carry.iter_mut().for_each(|c| *c = F::zero());
        if let Some(p) = prev_of(t) {
            let hp = &states[p * hid..(p + 1) * hid];
            for j in 0..hid {
                let row = r_rec.start + j * hid;
                for k in 0..hid {
                    g[row + k] = g[row + k] + da[j] * hp[k];
                    carry[k] = carry[k] + w_rec[j * hid + k] * da[j];
                }
            }
        }
    }
    matmul(&d_pre, true, feat, false, &mut g[r_in], hid, frames, ins, true);
    matmul(&d_pre, false, w_in, false, d_feat, frames, hid, ins, true);
}

#[cfg(test)]
mod tests {
    use super::super::{init_params, Architecture};
    use super::*;

    #[test]
    fn shape_law_and_teacher_presence() {
        let p = init_params(20, 1);
        let batch = ImageBatch::new(2, 32, 280, vec![0.0f32; 2 * 3 * 32 * 280]).unwrap();
        let tr = forward(&p, &batch, false).unwrap();
        assert_eq!(tr.frames, 70);
        assert_eq!(tr.student_logits.len(), 2 * 70 * 21);
        assert!(tr.teacher.is_none());
        assert!(tr.student_logits.iter().all(|v| v.is_finite()));
        let tr = forward(&p, &batch, true).unwrap();
        assert_eq!(tr.teacher.as_ref().unwrap().logits.len(), 2 * 70 * 21);
    }

    #[test]
    fn identical_images_identical_rows() {
        let p = init_params(5, 2);
        let img: Vec<f32> = (0..3 * 8 * 16).map(|i| ((i * 37 % 101) as f32 / 50.0) - 1.0).collect();
        let batch = ImageBatch::stack(&[&img, &img], 8, 16).unwrap();
        let tr = forward(&p, &batch, true).unwrap();
        let half = tr.student_logits.len() / 2;
        assert_eq!(tr.student_logits[..half], tr.student_logits[half..]);
        let t = &tr.teacher.as_ref().unwrap().logits;
        assert_eq!(t[..half], t[half..]);
    }

    #[test]
    fn bad_shapes_are_rejected() {
        assert!(matches!(ImageBatch::<f32>::new(1, 30, 280, vec![0.0; 3 * 30 * 280]), Err(ModelError::BadInputSize { .. })));
        assert!(ImageBatch::<f32>::new(1, 32, 280, vec![0.0; 10]).is_err());
        let p = init_params(3, 0);
        let batch = ImageBatch::new(1, 4, 8, vec![0.0f32; 3 * 4 * 8]).unwrap();
        let tr = forward(&p, &batch, false).unwrap();
        assert!(backward(&p, &tr, &[0.0; 3], None).is_err());
        let ds = vec![0.0; 2 * 4];
        assert!(backward(&p, &tr, &ds, Some(&ds)).is_err());
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let arch = Architecture { channels: [2, 3, 4], hidden: 3, classes: 4 };
        let p = ModelParams::<f64>::init(arch, 3);
        let img: Vec<f64> = (0..3 * 4 * 8).map(|i| (i as f64 * 0.37).sin()).collect();
        let batch = ImageBatch::new(1, 4, 8, img).unwrap();
        let tr = forward(&p, &batch, true).unwrap();
        let zeros = vec![0.0; 2 * 4];
        let g = backward(&p, &tr, &zeros, Some(&zeros)).unwrap();
        assert!(g.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn im2col_col2im_are_adjoint() {
        // <im2col(x), y> == <x, col2im(y)> for random x, y.
        let (cin, h, w) = (2, 4, 5);
        let x: Vec<f64> = (0..cin * h * w).map(|i| (i as f64 * 1.3).cos()).collect();
        let y: Vec<f64> = (0..cin * 9 * h * w).map(|i| (i as f64 * 0.7).sin()).collect();
        let mut cols = Vec::new();
        im2col(&x, cin, h, w, &mut cols);
        let lhs: f64 = cols.iter().zip(&y).map(|(a, b)| a * b).sum();
        let mut back = vec![0.0; cin * h * w];
        col2im(&y, cin, h, w, &mut back);
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }
}
