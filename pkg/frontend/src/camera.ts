/** Pinhole camera and the orbit parameterization the UI drives.
 *
 * Camera axes: +x right, +y image-down, +z forward; `worldFromCamera` is a
 * 4x4 row-major rigid transform whose translation column is the eye.
 */

export interface Camera {
  fx: number;
  fy: number;
  cx: number;
  cy: number;
  width: number;
  height: number;
  /** Row-major 4x4. */
  worldFromCamera: Float64Array;
}

export interface CameraJson {
  fx: number;
  fy: number;
  cx: number;
  cy: number;
  width: number;
  height: number;
  world_from_camera: number[];
}

export function cameraFromJson(d: CameraJson): Camera {
  if (d.world_from_camera.length !== 16) {
    throw new Error("world_from_camera must be 16 floats");
  }
  return {
    fx: d.fx,
    fy: d.fy,
    cx: d.cx,
    cy: d.cy,
    width: d.width,
    height: d.height,
    worldFromCamera: Float64Array.from(d.world_from_camera),
  };
}

function norm3(v: [number, number, number]): [number, number, number] {
  const n = Math.hypot(v[0], v[1], v[2]);
  return [v[0] / n, v[1] / n, v[2] / n];
}

function cross3(
  a: [number, number, number],
  b: [number, number, number],
): [number, number, number] {
  return [
    a[1] * b[2] - a[2] * b[1],
    a[2] * b[0] - a[0] * b[2],
    a[0] * b[1] - a[1] * b[0],
  ];
}

export function lookAt(
  eye: [number, number, number],
  target: [number, number, number],
  up: [number, number, number],
  fovDeg: number,
  width: number,
  height: number,
): Camera {
  const fwd = norm3([target[0] - eye[0], target[1] - eye[1], target[2] - eye[2]]);
  const right = norm3(cross3(up, fwd));
  const down = cross3(fwd, right);
  const m = new Float64Array(16);
  for (let i = 0; i < 3; i++) {
    m[i * 4 + 0] = right[i];
    m[i * 4 + 1] = down[i];
    m[i * 4 + 2] = fwd[i];
    m[i * 4 + 3] = eye[i];
  }
  m[15] = 1;
  const f = (0.5 * width) / Math.tan((fovDeg * Math.PI) / 360);
  return { fx: f, fy: f, cx: width / 2, cy: height / 2, width, height, worldFromCamera: m };
}

export interface OrbitState {
  azimuthDeg: number;
  elevationDeg: number;
  distance: number;
  target: [number, number, number];
}

export function defaultOrbit(): OrbitState {
  return { azimuthDeg: 0, elevationDeg: 12, distance: 2, target: [0.5, 0.5, 0.5] };
}

const MIN_ELEVATION = -89;
const MAX_ELEVATION = 89;
const MIN_DISTANCE = 0.25;
const MAX_DISTANCE = 20;

/** Keep elevation away from the poles and distance strictly positive. */
export function clampOrbit(orbit: OrbitState): void {
  orbit.elevationDeg = Math.min(Math.max(orbit.elevationDeg, MIN_ELEVATION), MAX_ELEVATION);
  orbit.distance = Math.min(Math.max(orbit.distance, MIN_DISTANCE), MAX_DISTANCE);
}

/** Inward-looking camera on the orbit sphere, 40 degree vertical fov. */
export function orbitCamera(orbit: OrbitState, width: number, height: number): Camera {
  const az = (orbit.azimuthDeg * Math.PI) / 180;
  const el = (orbit.elevationDeg * Math.PI) / 180;
  const t = orbit.target;
  const eye: [number, number, number] = [
    t[0] + orbit.distance * Math.sin(az) * Math.cos(el),
    t[1] + orbit.distance * Math.sin(el),
    t[2] - orbit.distance * Math.cos(az) * Math.cos(el),
  ];
  return lookAt(eye, t, [0, 1, 0], 40, width, height);
}

export interface Ray {
  origin: [number, number, number];
  dir: [number, number, number];
}

/** World ray through the center of pixel (u, v), unit direction. */
export function pixelRay(cam: Camera, u: number, v: number): Ray {
  const xc = (u + 0.5 - cam.cx) / cam.fx;
  const yc = (v + 0.5 - cam.cy) / cam.fy;
  const m = cam.worldFromCamera;
  const dx = m[0] * xc + m[1] * yc + m[2];
  const dy = m[4] * xc + m[5] * yc + m[6];
  const dz = m[8] * xc + m[9] * yc + m[10];
  const n = Math.sqrt(dx * dx + dy * dy + dz * dz);
  return {
    origin: [m[3], m[7], m[11]],
    dir: [dx / n, dy / n, dz / n],
  };
}
