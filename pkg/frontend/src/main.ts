// Browser entry point: wire the session runner to the page.

import { StudyApi } from './api.js';
import { SessionRunner } from './app.js';

export async function boot(root: HTMLElement, raterId: string, baseUrl = ''): Promise<void> {
  const api = new StudyApi(baseUrl);
  const runner = new SessionRunner(api, raterId, root);
  const submit = document.createElement('button');
  submit.textContent = 'Submit choice';
  submit.addEventListener('click', () => {
    runner.submit().catch((err) => {
      submit.setAttribute('data-error', String(err));
    });
  });
  root.ownerDocument.body.appendChild(submit);
  await runner.start();
}

if (typeof document !== 'undefined' && document.getElementById('rater-root')) {
  const params = new URLSearchParams(window.location.search);
  void boot(
    document.getElementById('rater-root') as HTMLElement,
    params.get('rater') ?? `rater-${Math.random().toString(36).slice(2, 10)}`,
  );
}
